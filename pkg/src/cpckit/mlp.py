"""Fully-connected feature extractor with optional residual blocks.

Blocks come in three kinds. With H(x) = act(W x + b):

    plain            x -> H(x)
    residual_add     x -> H(x) + x        (hidden width must equal input width)
    residual_concat  x -> [H(x), x]       (widths add)

A linear head produces class scores; training minimizes mean cross-entropy
with mini-batch SGD, classical momentum, per-epoch learning-rate decay, and
inverted dropout applied to H(x) before the skip connection merges back in.
Backward passes are exact analytic gradients, checked against central
finite differences in the test suite.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .errors import BadArch, DimMismatch, Divergence

PLAIN = "plain"
RESIDUAL_ADD = "residual_add"
RESIDUAL_CONCAT = "residual_concat"

_KIND_TO_TOKEN = {PLAIN: "fc", RESIDUAL_ADD: "add", RESIDUAL_CONCAT: "concat"}
_TOKEN_TO_KIND = {v: k for k, v in _KIND_TO_TOKEN.items()}

RELU = "relu"
IDENTITY = "identity"  # linear variant, for gradient-check builds only


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    hidden_width: int

    def __post_init__(self):
        if self.kind not in (PLAIN, RESIDUAL_ADD, RESIDUAL_CONCAT):
            raise BadArch(f"unknown block kind {self.kind!r}")
        if self.hidden_width < 1:
            raise BadArch("hidden_width must be at least 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.5
    dropout: float = 0.2
    batch_size: int = 128
    epochs: int = 10
    lr_decay_per_epoch: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise BadArch("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise BadArch("momentum must lie in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise BadArch("dropout must lie in [0, 1)")
        if self.batch_size < 1:
            raise BadArch("batch_size must be at least 1")
        if self.epochs < 0:
            raise BadArch("epochs must be non-negative")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise BadArch("lr_decay_per_epoch must lie in (0, 1]")


@dataclass
class MlpModel:
    input_dim: int
    block_specs: list[BlockSpec]
    class_count: int
    weights: list[np.ndarray]  # per block, (hidden, in_width)
    biases: list[np.ndarray]
    head_w: np.ndarray  # (class_count, feature_width)
    head_b: np.ndarray
    feature_tap: int  # block index whose output is exported as features
    activation: str = RELU

    @property
    def feature_width(self) -> int:
        return self.head_w.shape[1]


def block_widths(input_dim: int, blocks: list[BlockSpec]) -> list[int]:
    """Output width after each block; raises on width-algebra violations."""
    w = input_dim
    out = []
    for spec in blocks:
        if spec.kind == PLAIN:
            w = spec.hidden_width
        elif spec.kind == RESIDUAL_ADD:
            if spec.hidden_width != w:
                raise BadArch(
                    f"residual_add needs hidden width {w} to match its input, "
                    f"got {spec.hidden_width}"
                )
        else:
            w = spec.hidden_width + w
        out.append(w)
    return out


def build_mlp(
    input_dim: int,
    blocks: list[BlockSpec],
    class_count: int,
    seed: int = 0,
    feature_tap: int | None = None,
    activation: str = RELU,
) -> MlpModel:
    """Construct a model with uniform +/- sqrt(6 / (fan_in + fan_out)) weights
    and zero biases. feature_tap defaults to the last block."""
    if input_dim < 1:
        raise BadArch("input_dim must be at least 1")
    if class_count < 2:
        raise BadArch("need at least two classes")
    if not blocks:
        raise BadArch("need at least one block")
    if activation not in (RELU, IDENTITY):
        raise BadArch(f"unknown activation {activation!r}")
    widths = block_widths(input_dim, blocks)
    if feature_tap is None:
        feature_tap = len(blocks) - 1
    if not 0 <= feature_tap < len(blocks):
        raise BadArch(f"feature_tap {feature_tap} outside [0, {len(blocks)})")

    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    weights, biases = [], []
    w_in = input_dim
    for spec, w_out in zip(blocks, widths):
        weights.append(glorot(spec.hidden_width, w_in))
        biases.append(np.zeros(spec.hidden_width))
        w_in = w_out
    head_w = glorot(class_count, widths[-1])
    head_b = np.zeros(class_count)
    return MlpModel(
        input_dim=input_dim,
        block_specs=list(blocks),
        class_count=class_count,
        weights=weights,
        biases=biases,
        head_w=head_w,
        head_b=head_b,
        feature_tap=feature_tap,
        activation=activation,
    )


# architecture strings: "in:8 concat:16 concat:16 fc:32 head:4" ----------

def parse_arch(text: str) -> tuple[int, list[BlockSpec], int]:
    tokens = text.split()
    if len(tokens) < 3:
        raise BadArch(f"arch {text!r} needs in:, at least one block, and head:")
    parsed = []
    for tok in tokens:
        name, _, num = tok.partition(":")
        try:
            width = int(num)
        except ValueError:
            raise BadArch(f"bad token {tok!r} in arch string") from None
        parsed.append((name, width))
    if parsed[0][0] != "in" or parsed[-1][0] != "head":
        raise BadArch("arch string must start with in: and end with head:")
    blocks = []
    for name, width in parsed[1:-1]:
        if name not in _TOKEN_TO_KIND:
            raise BadArch(f"unknown block token {name!r}")
        blocks.append(BlockSpec(_TOKEN_TO_KIND[name], width))
    return parsed[0][1], blocks, parsed[-1][1]


def format_arch(m: MlpModel) -> str:
    middle = " ".join(
        f"{_KIND_TO_TOKEN[s.kind]}:{s.hidden_width}" for s in m.block_specs
    )
    return f"in:{m.input_dim} {middle} head:{m.class_count}"


# forward / backward ------------------------------------------------------

def _act(m: MlpModel, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if m.activation == RELU else z


def _forward_batch(m, X, train_mode=False, dropout=0.0, rng=None):
    """Returns (scores, block_outputs, caches). Dropout masks only exist in
    train mode; scaling is inverted so eval needs no correction."""
    caches = []
    outputs = []
    x = X
    for spec, W, b in zip(m.block_specs, m.weights, m.biases):
        z = x @ W.T + b
        a = _act(m, z)
        mask = None
        if train_mode and dropout > 0.0:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * mask
        if spec.kind == PLAIN:
            out = a
        elif spec.kind == RESIDUAL_ADD:
            out = a + x
        else:
            out = np.concatenate([a, x], axis=1)
        caches.append({"x": x, "z": z, "mask": mask})
        outputs.append(out)
        x = out
    scores = x @ m.head_w.T + m.head_b
    return scores, outputs, caches


def forward(m: MlpModel, x, train_mode: bool = False, seed: int = 0, dropout: float = 0.0):
    """Single-sample forward pass: (class scores, per-block activations)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != m.input_dim:
        raise DimMismatch(f"model expects d={m.input_dim}, got {x.shape[0]}")
    rng = np.random.default_rng(seed) if train_mode else None
    scores, outputs, _ = _forward_batch(
        m, x[None, :], train_mode=train_mode, dropout=dropout, rng=rng
    )
    return scores[0], [o[0] for o in outputs]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray


def _mean_ce(scores, y):
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(y)), y]))


def _backward_from_caches(m, y, scores, head_in, caches):
    n = len(y)
    shifted = scores - scores.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    P = expl / expl.sum(axis=1, keepdims=True)
    P[np.arange(n), y] -= 1.0
    g = P / n  # d loss / d scores

    gh_w = g.T @ head_in
    gh_b = g.sum(axis=0)
    g_x = g @ m.head_w

    gws, gbs = [None] * len(caches), [None] * len(caches)
    for i in range(len(caches) - 1, -1, -1):
        spec = m.block_specs[i]
        x_in, z, mask = caches[i]["x"], caches[i]["z"], caches[i]["mask"]
        h = z.shape[1]
        if spec.kind == PLAIN:
            g_a, g_skip = g_x, 0.0
        elif spec.kind == RESIDUAL_ADD:
            g_a, g_skip = g_x, g_x
        else:
            g_a, g_skip = g_x[:, :h], g_x[:, h:]
        if mask is not None:
            g_a = g_a * mask
        g_z = g_a * (z > 0) if m.activation == RELU else g_a
        gws[i] = g_z.T @ x_in
        gbs[i] = g_z.sum(axis=0)
        g_x = g_z @ m.weights[i] + g_skip
    return Gradients(weights=gws, biases=gbs, head_w=gh_w, head_b=gh_b)


def loss_and_gradients(m, X, y, train_mode=False, dropout=0.0, rng=None):
    """Mean cross-entropy over the batch and its exact parameter gradients."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    scores, outputs, caches = _forward_batch(
        m, X, train_mode=train_mode, dropout=dropout, rng=rng
    )
    loss = _mean_ce(scores, y)
    grads = _backward_from_caches(m, y, scores, outputs[-1], caches)
    return loss, grads


def backward(m: MlpModel, X, y) -> Gradients:
    """Exact analytic gradients of the mean cross-entropy over a batch."""
    _, grads = loss_and_gradients(m, X, y)
    return grads


def train(m: MlpModel, ds: LabeledDataset, cfg: TrainConfig) -> tuple[MlpModel, list[float]]:
    """SGD with momentum and per-epoch lr decay. Returns a new model and the
    per-epoch mean batch loss; raises Divergence if the loss leaves the
    finite range. epochs=0 returns an unchanged copy."""
    if ds.d != m.input_dim:
        raise DimMismatch(f"model expects d={m.input_dim}, dataset has d={ds.d}")
    if ds.labels.size and ds.labels.max() >= m.class_count:
        raise DimMismatch("dataset labels exceed the model head width")
    model = copy.deepcopy(m)
    rng = np.random.default_rng(cfg.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    vel_hw = np.zeros_like(model.head_w)
    vel_hb = np.zeros_like(model.head_b)
    lr = cfg.learning_rate
    batch = min(cfg.batch_size, ds.n)
    trace = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(ds.n)
        losses = []
        for start in range(0, ds.n, batch):
            sel = perm[start : start + batch]
            loss, g = loss_and_gradients(
                model,
                ds.features[sel],
                ds.labels[sel],
                train_mode=True,
                dropout=cfg.dropout,
                rng=rng,
            )
            if not np.isfinite(loss):
                raise Divergence(epoch, loss)
            losses.append(loss)
            for i in range(len(model.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * g.weights[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * g.biases[i]
                model.weights[i] = model.weights[i] + vel_w[i]
                model.biases[i] = model.biases[i] + vel_b[i]
            vel_hw = cfg.momentum * vel_hw - lr * g.head_w
            vel_hb = cfg.momentum * vel_hb - lr * g.head_b
            model.head_w = model.head_w + vel_hw
            model.head_b = model.head_b + vel_hb
        trace.append(float(np.mean(losses)))
        lr *= cfg.lr_decay_per_epoch
    return model, trace


def extract_features(m: MlpModel, ds: LabeledDataset) -> LabeledDataset:
    """Evaluation-mode activations at feature_tap, labels carried through."""
    if ds.d != m.input_dim:
        raise DimMismatch(f"model expects d={m.input_dim}, dataset has d={ds.d}")
    _, outputs, _ = _forward_batch(m, ds.features)
    return LabeledDataset(
        features=outputs[m.feature_tap],
        labels=ds.labels,
        class_count=ds.class_count,
        regime_tags=ds.regime_tags,
        label_map=ds.label_map,
    )


# serialization ------------------------------------------------------------

def mlp_to_json(m: MlpModel) -> dict:
    return {
        "arch": format_arch(m),
        "feature_tap": m.feature_tap,
        "activation": m.activation,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "head_w": m.head_w.tolist(),
        "head_b": m.head_b.tolist(),
    }


def mlp_from_json(obj: dict) -> MlpModel:
    input_dim, blocks, class_count = parse_arch(obj["arch"])
    return MlpModel(
        input_dim=input_dim,
        block_specs=blocks,
        class_count=class_count,
        weights=[np.asarray(w, dtype=np.float64) for w in obj["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in obj["biases"]],
        head_w=np.asarray(obj["head_w"], dtype=np.float64),
        head_b=np.asarray(obj["head_b"], dtype=np.float64),
        feature_tap=int(obj["feature_tap"]),
        activation=obj.get("activation", RELU),
    )


def save_mlp(m: MlpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_json(m), fh)
        fh.write("\n")


def load_mlp(path) -> MlpModel:
    with open(path) as fh:
        return mlp_from_json(json.load(fh))
