import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speclab.models import (ModelPair, ScriptedModel, Vocab, load_model, sample_next, save_model,
                            train_ngram)

AB = Vocab(("a", "b"))


class TestVocab:
    def test_from_texts_puts_eos_first(self):
        v = Vocab.from_texts(["ba", "c"])
        assert v.tokens == ("</s>", "a", "b", "c")
        assert v.eos_id == 0

    def test_roundtrip_text(self):
        v = Vocab.from_texts(["hello world"])
        assert v.decode(v.encode("hello") + [v.eos_id]) == "hello"

    def test_unknown_char(self):
        v = Vocab.from_texts(["ab"])
        with pytest.raises(KeyError):
            v.encode("abz")
        assert v.encode("abz", skip_unknown=True) == v.encode("ab")


class TestNGram:
    def test_bigram_laplace(self):
        # a->a once, a->b once: (1+1)/(2+2) each
        m = train_ngram(["aab"], order=2, alpha=1.0, vocab=AB)
        np.testing.assert_allclose(m.next_dist([0]).probs, [0.5, 0.5])

    def test_tiny_alpha_follows_counts(self):
        m = train_ngram(["aa"], order=2, alpha=1e-9, vocab=AB)
        d = m.next_dist([0]).probs
        assert d[0] == pytest.approx(1.0, abs=1e-6) and d[1] < 1e-6

    def test_unigram_equal_counts(self):
        m = train_ngram(["ab"], order=1, alpha=1.0, vocab=AB)
        np.testing.assert_allclose(m.next_dist([1, 0, 1]).probs, [0.5, 0.5])

    def test_backoff_to_unigram(self):
        # context 'b' never precedes anything at order 2, so the bigram row for
        # ('b',) is unseen; the unigram has a:2, b:2 -> uniform
        v = Vocab(("a", "b"))
        m = train_ngram([[0, 1], [0, 1]], order=2, alpha=1.0, vocab=v)
        np.testing.assert_allclose(m.next_dist([1]).probs, [0.5, 0.5])

    def test_short_context_padded(self):
        # order 3: the first token is predicted from (BOS, BOS)
        m = train_ngram(["ab", "ab"], order=3, alpha=0.5, vocab=AB)
        # (BOS,BOS)->a twice: (2+.5)/(2+1)
        np.testing.assert_allclose(m.next_dist([]).probs, [2.5 / 3, 0.5 / 3])

    def test_eos_appended(self):
        v = Vocab.from_texts(["ab"])
        m = train_ngram(["ab"], order=2, alpha=1e-9, vocab=v)
        assert m.next_dist(v.encode("ab")).argmax == v.eos_id

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_ngram([], 2, 1.0, AB)

    def test_serialization_roundtrip_bitwise(self, tmp_path):
        lines = ["the cat sat", "the dog sat on the mat", "a cat"]
        v = Vocab.from_texts(lines)
        m = train_ngram(lines, 4, 0.1, v)
        save_model(m, tmp_path / "m.json")
        m2 = load_model(tmp_path / "m.json")
        for line in lines + ["the bat"]:
            ids = v.encode(line, skip_unknown=True)
            for i in range(len(ids) + 1):
                assert np.array_equal(m.next_dist(ids[:i]).probs, m2.next_dist(ids[:i]).probs)

    def test_bad_version(self, tmp_path):
        (tmp_path / "m.json").write_text('{"kind": "ngram", "format_version": 99}')
        with pytest.raises(ValueError):
            load_model(tmp_path / "m.json")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.text("abc ", min_size=1, max_size=12), min_size=1, max_size=5),
           st.integers(1, 4), st.lists(st.sampled_from("abc "), max_size=6))
    def test_next_dist_always_valid(self, corpus, order, ctx):
        v = Vocab.from_texts(corpus + ["abc "])
        m = train_ngram(corpus, order, 0.3, v)
        d = m.next_dist(v.encode("".join(ctx)))
        assert len(d) == len(v) and abs(d.probs.sum() - 1) < 1e-9


class TestScripted:
    def test_table_lookup_longest_suffix(self):
        v = Vocab(("x", "y"))
        m = ScriptedModel(v, {(0,): [0.9, 0.1], (1, 0): [0.2, 0.8]}, default=[0.5, 0.5])
        np.testing.assert_allclose(m.next_dist([1, 1, 0]).probs, [0.2, 0.8])
        np.testing.assert_allclose(m.next_dist([0, 0]).probs, [0.9, 0.1])
        np.testing.assert_allclose(m.next_dist([1]).probs, [0.5, 0.5])

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError):
            ScriptedModel(AB, {(0,): [1.0]})

    def test_roundtrip(self, tmp_path):
        m = ScriptedModel(AB, {(0,): [0.9, 0.1], (): [0.3, 0.7]})
        save_model(m, tmp_path / "s.json")
        m2 = load_model(tmp_path / "s.json")
        for ctx in ([], [0], [1], [1, 0]):
            assert np.array_equal(m.next_dist(ctx).probs, m2.next_dist(ctx).probs)


class TestSampling:
    def test_greedy(self):
        m = ScriptedModel(AB, {}, default=[0.2, 0.8])
        assert sample_next(m, [0], 0.0, np.random.default_rng(0)) == 1

    def test_greedy_tie_lowest_index(self):
        m = ScriptedModel(AB, {}, default=[0.5, 0.5])
        assert sample_next(m, [0], 0.0, np.random.default_rng(0)) == 0

    def test_seeded_reproducible(self):
        m = ScriptedModel(AB, {}, default=[0.5, 0.5])
        a = [sample_next(m, [0], 1.0, np.random.default_rng(7)) for _ in range(5)]
        b = [sample_next(m, [0], 1.0, np.random.default_rng(7)) for _ in range(5)]
        assert a == b

    def test_sampling_frequencies(self):
        m = ScriptedModel(Vocab(("a", "b", "c")), {}, default=[0.2, 0.5, 0.3])
        rng = np.random.default_rng(3)
        draws = np.bincount([sample_next(m, [0], 1.0, rng) for _ in range(20000)], minlength=3)
        np.testing.assert_allclose(draws / 20000, [0.2, 0.5, 0.3], atol=0.015)

    @settings(max_examples=40)
    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
    def test_zero_temperature_is_argmax(self, w):
        v = Vocab(tuple("abcdef"[: len(w)]))
        m = ScriptedModel(v, {}, default=np.asarray(w) / sum(w))
        assert sample_next(m, [0], 0.0, np.random.default_rng(0)) == m.next_dist([0]).argmax


def test_pair_requires_shared_vocab():
    t = ScriptedModel(AB, {})
    d = ScriptedModel(Vocab(("a", "c")), {})
    with pytest.raises(ValueError):
        ModelPair(t, d)
