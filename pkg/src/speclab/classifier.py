"""Halting classifier: feature extraction, a two-layer feed-forward net with
hand-written backprop, training, and F1 scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DEFAULT_TOP_K, FeatureVector, tv_distance
from .engine import GenerationConfig, autoregressive_generate
from .models import ModelPair

FEATURE_FORMAT_VERSION = 1
CLASSIFIER_FORMAT_VERSION = 1
_CLASSIFIER_MAGIC = "speclab-ffn"

# keeps sigmoid output strictly inside (0, 1)
_P_MIN = np.finfo(np.float64).tiny
_P_MAX = 1.0 - np.finfo(np.float64).epsneg


@dataclass(frozen=True)
class LabeledFeature:
    features: FeatureVector
    accept_label: bool
    soft_label: float


@dataclass
class FfnParams:
    """Weights of C = sigmoid(w2 . relu(w1 x + b1) + b2).

    The last input is the token position; it is divided by ``position_scale``
    before entering the net.
    """

    w1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    position_scale: float = 1.0

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        h = self.w1.shape[0]
        if self.w1.ndim != 2 or self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValueError("inconsistent FFN parameter shapes")
        if self.position_scale <= 0:
            raise ValueError("position_scale must be > 0")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2, [self.b2])):
            raise ValueError("FFN parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, position_scale: float = 1.0) -> FfnParams:
        return cls(np.zeros((hidden_dim, input_dim)), np.zeros(hidden_dim),
                   np.zeros(hidden_dim), 0.0, position_scale)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
             position_scale: float = 1.0) -> FfnParams:
        """He-normal hidden layer, small output layer, zero biases."""
        w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden_dim, input_dim))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=hidden_dim)
        return cls(w1, np.zeros(hidden_dim), w2, 0.0, position_scale)

    def copy(self) -> FfnParams:
        return FfnParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2,
                         self.position_scale)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    hidden_dim: int = 32
    label: str = "soft"  # "soft": 1 - TV target; "hard": argmax agreement
    position_scale: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValueError("invalid training configuration")
        if self.label not in ("soft", "hard"):
            raise ValueError("label must be 'soft' or 'hard'")


def _sigmoid(z: np.ndarray | float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _P_MIN, _P_MAX)


def _logits(p: FfnParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z1 = X @ p.w1.T + p.b1
    return z1, np.maximum(z1, 0.0) @ p.w2 + p.b2


def ffn_forward_array(p: FfnParams, x: np.ndarray) -> float:
    """Forward pass on an already-scaled input vector."""
    if x.shape[-1] != p.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, classifier expects {p.input_dim}")
    z = float(np.maximum(p.w1 @ x + p.b1, 0.0) @ p.w2 + p.b2)
    return float(_sigmoid(np.array([z]))[0])


def ffn_forward(p: FfnParams, x: FeatureVector) -> float:
    return ffn_forward_array(p, x.as_array(p.position_scale))


def predict_proba(p: FfnParams, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != p.input_dim:
        raise ValueError(f"input has {X.shape[1]} features, classifier expects {p.input_dim}")
    return _sigmoid(_logits(p, X)[1])


def design_matrix(data: Sequence[LabeledFeature] | Sequence[FeatureVector],
                  position_scale: float) -> np.ndarray:
    feats = [d.features if isinstance(d, LabeledFeature) else d for d in data]
    return np.stack([f.as_array(position_scale) for f in feats])


def loss_and_grads(p: FfnParams, X: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy against (possibly soft) targets and its gradient.

    The loss is evaluated in logit form, softplus(z) - y z, so it stays finite
    for saturated outputs.
    """
    n = X.shape[0]
    z1, z2 = _logits(p, X)
    a1 = np.maximum(z1, 0.0)
    loss = float(np.mean(np.logaddexp(0.0, z2) - y * z2))
    dz2 = (_sigmoid(z2) - y) / n
    dz1 = np.outer(dz2, p.w2) * (z1 > 0)
    grads = {
        "w1": dz1.T @ X,
        "b1": dz1.sum(axis=0),
        "w2": a1.T @ dz2,
        "b2": np.array(dz2.sum()),
    }
    return loss, grads


def mean_loss(p: FfnParams, X: np.ndarray, y: np.ndarray) -> float:
    return loss_and_grads(p, X, y)[0]


def targets(data: Sequence[LabeledFeature], label: str = "soft") -> np.ndarray:
    if label == "soft":
        return np.array([d.soft_label for d in data], dtype=np.float64)
    return np.array([1.0 if d.accept_label else 0.0 for d in data])


def train(data: Sequence[LabeledFeature], cfg: TrainConfig = TrainConfig(),
          init: FfnParams | None = None) -> FfnParams:
    """Mini-batch gradient descent on mean cross-entropy."""
    if not data:
        raise ValueError("no training data")
    X = design_matrix(data, cfg.position_scale)
    y = targets(data, cfg.label)
    rng = np.random.default_rng(cfg.seed)
    p = init.copy() if init is not None else FfnParams.init(
        X.shape[1], cfg.hidden_dim, rng, cfg.position_scale)
    lr = cfg.learning_rate
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_and_grads(p, X[idx], y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}; learning rate {lr} diverges")
            p.w1 -= lr * g["w1"]
            p.b1 -= lr * g["b1"]
            p.w2 -= lr * g["w2"]
            p.b2 -= lr * float(g["b2"])
    if not all(np.all(np.isfinite(a)) for a in (p.w1, p.b1, p.w2, [p.b2])):
        raise FloatingPointError("training produced non-finite parameters")
    return p


def oracle_positions(accepts: Sequence[bool], sl_max: int) -> list[int]:
    """Position of each token within its speculative round, assuming rounds
    end at the first rejected token or after ``sl_max`` drafts."""
    out = []
    pos = 1
    for ok in accepts:
        out.append(pos)
        pos = pos + 1 if ok and pos < sl_max else 1
    return out


def extract_features(pair: ModelPair, prompts: Sequence[Sequence[int]], cfg: GenerationConfig,
                     k: int = DEFAULT_TOP_K, position_mode: str = "iteration") -> list[LabeledFeature]:
    """Label every token of the target's greedy continuation of each prompt.

    The draft predicts one token at a time conditioned on the prompt plus the
    target's own prefix. Positions are per-round (see ``oracle_positions``) or
    1-based offsets from the start of the continuation.
    """
    if cfg.temperature != 0:
        raise ValueError("feature extraction runs at temperature 0")
    if not prompts:
        raise ValueError("empty corpus")
    if position_mode not in ("iteration", "global"):
        raise ValueError("position_mode must be 'iteration' or 'global'")
    out: list[LabeledFeature] = []
    for prompt in prompts:
        ref = autoregressive_generate(pair.target, prompt, cfg).output
        ctx = list(prompt)
        rows = []
        for tok in ref:
            q = pair.draft.next_dist(ctx)
            p = pair.target.next_dist(ctx)
            rows.append((q, q.argmax == p.argmax, 1.0 - tv_distance(q, p)))
            ctx.append(tok)
        if position_mode == "iteration":
            positions = oracle_positions([ok for _, ok, _ in rows], cfg.sl_max)
        else:
            positions = list(range(1, len(rows) + 1))
        for (q, ok, soft), pos in zip(rows, positions):
            out.append(LabeledFeature(FeatureVector.from_dist(q, pos, k), bool(ok),
                                      min(max(soft, 0.0), 1.0)))
    return out


def f1_eval(preds: Sequence[bool], labels: Sequence[bool]) -> tuple[float, float, float]:
    """Precision, recall and F1 with "accept / continue" as the positive class.

    With no positive predictions and no positive labels all three are 1;
    otherwise an undefined ratio counts as 0.
    """
    if len(preds) != len(labels):
        raise ValueError("preds and labels differ in length")
    tp = sum(1 for a, b in zip(preds, labels) if a and b)
    fp = sum(1 for a, b in zip(preds, labels) if a and not b)
    fn = sum(1 for a, b in zip(preds, labels) if b and not a)
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def disco_predictions(p: FfnParams, data: Sequence[LabeledFeature], tau: float,
                      sl_max: int | None = None) -> list[bool]:
    conf = predict_proba(p, design_matrix(data, p.position_scale))
    preds = conf >= tau
    if sl_max is not None:
        preds &= np.array([d.features.position < sl_max for d in data])
    return [bool(v) for v in preds]


def static_predictions(data: Sequence[LabeledFeature], gamma: int) -> list[bool]:
    """What a fixed lookahead implies: keep drafting while position < gamma."""
    return [d.features.position < gamma for d in data]


def save_features(data: Iterable[LabeledFeature], path: str | Path, k: int,
                  position_mode: str = "iteration") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        head = {"type": "features", "format_version": FEATURE_FORMAT_VERSION, "k": k,
                "position_mode": position_mode}
        fh.write(json.dumps(head) + "\n")
        for d in data:
            rec = {"top_probs": list(d.features.top_probs), "entropy": d.features.entropy_nats,
                   "position": d.features.position, "accept_label": d.accept_label,
                   "soft_label": d.soft_label}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_features(path: str | Path) -> list[LabeledFeature]:
    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("format_version") != FEATURE_FORMAT_VERSION:
            raise ValueError(f"unsupported feature format {head.get('format_version')!r}")
        out = []
        for line in fh:
            r = json.loads(line)
            fv = FeatureVector(tuple(r["top_probs"]), r["entropy"], r["position"])
            out.append(LabeledFeature(fv, r["accept_label"], r["soft_label"]))
    return out


def save_classifier(p: FfnParams, path: str | Path) -> None:
    """Flat text: magic + version, dims, position scale, then w1 (row-major),
    b1, w2 and b2, one vector per line, floats in shortest round-trip form."""
    fmt = lambda arr: " ".join(repr(float(v)) for v in np.ravel(arr))  # noqa: E731
    lines = [f"{_CLASSIFIER_MAGIC} {CLASSIFIER_FORMAT_VERSION}",
             f"{p.input_dim} {p.hidden_dim}",
             repr(float(p.position_scale))]
    lines += [fmt(row) for row in p.w1]
    lines += [fmt(p.b1), fmt(p.w2), repr(p.b2)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_classifier(path: str | Path) -> FfnParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    magic, version = lines[0].split()
    if magic != _CLASSIFIER_MAGIC or int(version) != CLASSIFIER_FORMAT_VERSION:
        raise ValueError(f"not a version-{CLASSIFIER_FORMAT_VERSION} classifier file: {lines[0]!r}")
    d_in, h = (int(v) for v in lines[1].split())
    scale = float(lines[2])
    vec = lambda s: np.array([float(v) for v in s.split()])  # noqa: E731
    w1 = np.stack([vec(lines[3 + i]) for i in range(h)])
    b1, w2 = vec(lines[3 + h]), vec(lines[4 + h])
    b2 = float(lines[5 + h])
    if w1.shape != (h, d_in):
        raise ValueError("classifier file dimensions do not match its weights")
    return FfnParams(w1, b1, w2, b2, scale)
