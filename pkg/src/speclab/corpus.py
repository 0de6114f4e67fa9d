"""Corpus loading, plus a seeded generator for the bundled default corpus.

The default corpus mixes short programming-task descriptions with one-line
Python solutions and asserts. Boilerplate spans ("Write a function to",
"def", "return") are easy for a low-order draft model; identifiers and
literals are not, which gives the uneven per-token agreement that dynamic
lookahead exploits.
"""

from __future__ import annotations

import random
from importlib import resources
from pathlib import Path

DEFAULT_CORPUS_NAME = "code_tasks.txt"
DEFAULT_CORPUS_LINES = 1000
DEFAULT_CORPUS_SEED = 1234

_VERBS = ["count", "find", "sum", "check", "remove", "sort", "merge", "reverse",
          "split", "join", "filter", "get", "compute", "convert", "rotate", "flatten"]
_NOUNS = ["list", "string", "words", "digits", "items", "pairs", "values", "chars",
          "numbers", "matrix", "tuple", "vowels", "primes", "evens", "keys", "lines"]
_ARGS = ["nums", "text", "items", "s", "arr", "lst", "words", "data", "seq", "xs"]
_TASKS = [
    "count the number of {noun} in the given {what}",
    "find the maximum {noun} in a {what}",
    "remove duplicate {noun} from a {what}",
    "sort the given {what} of {noun}",
    "check whether the {what} contains only {noun}",
    "reverse the {noun} of a given {what}",
    "find the sum of all {noun} in a {what}",
    "merge two sorted {what}s of {noun}",
    "split a {what} into {noun}",
    "return the {ordinal} smallest {noun} in a {what}",
]
_WHATS = ["list", "string", "tuple", "array", "dictionary", "sentence"]
_ORDINALS = ["first", "second", "third", "k-th", "last"]
_BODIES = [
    "return sorted({a})",
    "return len({a})",
    "return [x for x in {a} if x % {k} == 0]",
    "return sum({a}) / len({a})",
    "return {a}[::-1]",
    "return max({a}, key=len)",
    "return ''.join(sorted({a}))",
    "return {{x: {a}.count(x) for x in set({a})}}",
    "return {a}.split('{sep}')",
    "return any(x > {k} for x in {a})",
    "return list(map(int, str({a})))",
    "return [i * {k} for i in range({a})]",
    "return min({a}) + max({a})",
    "return {a}[{k}:] + {a}[:{k}]",
]
_SEPS = [",", " ", ";", "-"]


def _name(rng: random.Random) -> str:
    return f"{rng.choice(_VERBS)}_{rng.choice(_NOUNS)}"


def _literal(rng: random.Random) -> str:
    kind = rng.randrange(3)
    if kind == 0:
        return "[" + ", ".join(str(rng.randrange(100)) for _ in range(rng.randint(2, 5))) + "]"
    if kind == 1:
        return repr("".join(rng.choice("abcdefghij") for _ in range(rng.randint(3, 7))))
    return str(rng.randrange(1000))


def _line(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.4:
        lang = rng.choice(["", "python "])
        task = rng.choice(_TASKS).format(noun=rng.choice(_NOUNS), what=rng.choice(_WHATS),
                                        ordinal=rng.choice(_ORDINALS))
        return f"Write a {lang}function to {task}."
    if kind < 0.8:
        a = rng.choice(_ARGS)
        body = rng.choice(_BODIES).format(a=a, k=rng.randint(2, 9), sep=rng.choice(_SEPS))
        return f"def {_name(rng)}({a}): {body}"
    return f"assert {_name(rng)}({_literal(rng)}) == {_literal(rng)}"


def generate_code_corpus(n_lines: int = DEFAULT_CORPUS_LINES,
                         seed: int = DEFAULT_CORPUS_SEED) -> list[str]:
    rng = random.Random(seed)
    return [_line(rng) for _ in range(n_lines)]


def default_corpus_path() -> Path:
    return Path(str(resources.files("speclab") / "data" / DEFAULT_CORPUS_NAME))


def read_corpus(path: str | Path | None = None) -> list[str]:
    """One prompt per non-empty line of a UTF-8 text file."""
    p = Path(path) if path is not None else default_corpus_path()
    lines = p.read_text(encoding="utf-8").splitlines()
    return [ln for ln in lines if ln.strip()]


if __name__ == "__main__":
    out = Path(__file__).parent / "data" / DEFAULT_CORPUS_NAME
    out.write_text("\n".join(generate_code_corpus()) + "\n", encoding="utf-8")
    print(f"wrote {out}")
