"""Self-contained classifier families behind a single train/predict contract.

Four kinds: multinomial softmax regression, one-vs-rest linear SVM, a random
forest, and k-nearest-neighbors. The linear models share a mini-batch SGD
optimizer with classical momentum. Everything is deterministic for a fixed
spec and seed; fits never mutate their input dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import LabeledDataset
from .errors import BadHyperparams, BadSpec, DimMismatch, EmptyDataset

SOFTMAX = "softmax"
LINEAR_SVM = "linear_svm"
RANDOM_FOREST = "random_forest"
KNN = "knn"

# Incremented on every fit() call so orchestration tests can confirm how
# often training actually ran (e.g. ensemble reuse across a theta sweep).
_fit_calls: dict[str, int] = {}


def fit_call_count(kind: str | None = None) -> int:
    if kind is None:
        return sum(_fit_calls.values())
    return _fit_calls.get(kind, 0)


@dataclass(frozen=True)
class SoftmaxParams:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 128
    l2: float = 1e-4
    momentum: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class SvmParams:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 128
    l2: float = 1e-4
    momentum: float = 0.5
    hinge_margin: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 100
    max_depth: int | None = None  # None grows to purity
    feature_subsample: int | None = None  # None means ceil(sqrt(d))
    seed: int = 0


@dataclass(frozen=True)
class KnnParams:
    k: int = 5


@dataclass(frozen=True)
class ClassifierSpec:
    """A classifier kind plus its kind-specific hyperparameters."""

    kind: str
    hyperparams: SoftmaxParams | SvmParams | ForestParams | KnnParams

    def __post_init__(self):
        expected = _PARAM_TYPES.get(self.kind)
        if expected is None:
            raise BadSpec(f"unknown classifier kind {self.kind!r}")
        if not isinstance(self.hyperparams, expected):
            raise BadSpec(
                f"{self.kind} expects {expected.__name__}, "
                f"got {type(self.hyperparams).__name__}"
            )


_PARAM_TYPES = {
    SOFTMAX: SoftmaxParams,
    LINEAR_SVM: SvmParams,
    RANDOM_FOREST: ForestParams,
    KNN: KnnParams,
}


def softmax_spec(**kw) -> ClassifierSpec:
    return ClassifierSpec(SOFTMAX, SoftmaxParams(**kw))


def svm_spec(**kw) -> ClassifierSpec:
    return ClassifierSpec(LINEAR_SVM, SvmParams(**kw))


def forest_spec(**kw) -> ClassifierSpec:
    return ClassifierSpec(RANDOM_FOREST, ForestParams(**kw))


def knn_spec(**kw) -> ClassifierSpec:
    return ClassifierSpec(KNN, KnnParams(**kw))


def with_seed(spec: ClassifierSpec, seed: int) -> ClassifierSpec:
    """Copy of spec with its seed replaced; a no-op for seedless kinds."""
    if spec.kind == KNN:
        return spec
    return ClassifierSpec(spec.kind, replace(spec.hyperparams, seed=int(seed)))


def _validate(spec: ClassifierSpec) -> None:
    hp = spec.hyperparams
    if isinstance(hp, (SoftmaxParams, SvmParams)):
        if hp.learning_rate <= 0:
            raise BadHyperparams("learning_rate must be positive")
        if hp.epochs < 0:
            raise BadHyperparams("epochs must be non-negative")
        if hp.batch_size < 1:
            raise BadHyperparams("batch_size must be at least 1")
        if hp.l2 < 0:
            raise BadHyperparams("l2 must be non-negative")
        if not 0 <= hp.momentum < 1:
            raise BadHyperparams("momentum must lie in [0, 1)")
        if isinstance(hp, SvmParams) and hp.hinge_margin <= 0:
            raise BadHyperparams("hinge_margin must be positive")
    elif isinstance(hp, ForestParams):
        if hp.tree_count < 1:
            raise BadHyperparams("tree_count must be at least 1")
        if hp.max_depth is not None and hp.max_depth < 1:
            raise BadHyperparams("max_depth must be at least 1")
        if hp.feature_subsample is not None and hp.feature_subsample < 1:
            raise BadHyperparams("feature_subsample must be at least 1")
    elif isinstance(hp, KnnParams):
        if hp.k < 1:
            raise BadHyperparams("k must be at least 1")


@dataclass
class TrainedClassifier:
    """Fitted state for any kind. predict only returns classes seen in training."""

    spec: ClassifierSpec
    classes_seen: np.ndarray
    input_dim: int
    state: object

    def predict(self, x) -> int:
        return int(self.predict_many(np.asarray(x, dtype=np.float64)[None, :])[0])

    def predict_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimMismatch(
                f"classifier expects d={self.input_dim}, got shape {X.shape}"
            )
        return _PREDICTORS[self.spec.kind](self, X)

    def decision_scores(self, X) -> np.ndarray:
        """Per-class scores over classes_seen: margins for the linear kinds,
        vote counts for forest and knn."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimMismatch(
                f"classifier expects d={self.input_dim}, got shape {X.shape}"
            )
        return _SCORERS[self.spec.kind](self, X)


def fit(spec: ClassifierSpec, ds: LabeledDataset) -> TrainedClassifier:
    """Train a classifier of the given kind on ds."""
    _fit_calls[spec.kind] = _fit_calls.get(spec.kind, 0) + 1
    _validate(spec)
    if ds.n == 0:
        raise EmptyDataset("cannot fit on an empty dataset")
    classes_seen = np.unique(ds.labels)
    y = np.searchsorted(classes_seen, ds.labels)
    state = _FITTERS[spec.kind](spec.hyperparams, ds.features, y, len(classes_seen))
    return TrainedClassifier(
        spec=spec, classes_seen=classes_seen, input_dim=ds.d, state=state
    )


# shared SGD machinery ---------------------------------------------------

@dataclass
class _LinearState:
    weights: np.ndarray  # (C', d)
    bias: np.ndarray  # (C',)
    loss_trace: list[float]


def _sgd(X, y, C, hp, step_fn):
    """Mini-batch SGD with classical momentum: v = mu v - lr g; w += v.

    step_fn returns (objective, grad_W, grad_b) for one batch, evaluated
    before the update. The trace records the mean batch objective per
    epoch, so full-batch mode traces the true objective at the start of
    every epoch. Full batches skip the shuffle: sample order cannot change
    a whole-set gradient.
    """
    n, d = X.shape
    rng = np.random.default_rng(hp.seed)
    W = np.zeros((C, d))
    b = np.zeros(C)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    batch = min(hp.batch_size, n)
    full = batch >= n
    trace = []
    for _ in range(hp.epochs):
        if full:
            loss, gW, gb = step_fn(W, b, X, y)
            vW = hp.momentum * vW - hp.learning_rate * gW
            vb = hp.momentum * vb - hp.learning_rate * gb
            W = W + vW
            b = b + vb
            trace.append(loss)
            continue
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            sel = perm[start : start + batch]
            loss, gW, gb = step_fn(W, b, X[sel], y[sel])
            losses.append(loss)
            vW = hp.momentum * vW - hp.learning_rate * gW
            vb = hp.momentum * vb - hp.learning_rate * gb
            W = W + vW
            b = b + vb
        trace.append(float(np.mean(losses)))
    return _LinearState(weights=W, bias=b, loss_trace=trace)


def _fit_softmax(hp: SoftmaxParams, X, y, C):
    eye = np.eye(C)

    def step(W, b, Xb, yb):
        nb = len(yb)
        logits = Xb @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        z = expl.sum(axis=1)
        ce = float(np.mean(np.log(z) - logits[np.arange(nb), yb]))
        loss = ce + 0.5 * hp.l2 * float(np.sum(W * W))
        P = expl / z[:, None]
        delta = P - eye[yb]
        gW = delta.T @ Xb / nb + hp.l2 * W
        gb = delta.mean(axis=0)
        return loss, gW, gb

    return _sgd(X, y, C, hp, step)


def _fit_svm(hp: SvmParams, X, y, C):
    def step(W, b, Xb, yb):
        nb = len(yb)
        T = -np.ones((nb, C))
        T[np.arange(nb), yb] = 1.0
        margins = hp.hinge_margin - T * (Xb @ W.T + b)
        active = margins > 0
        loss = float(np.maximum(margins, 0.0).mean(axis=0).sum())
        loss += 0.5 * hp.l2 * float(np.sum(W * W))
        coef = -(active * T)
        gW = coef.T @ Xb / nb + hp.l2 * W
        gb = coef.mean(axis=0)
        return loss, gW, gb

    return _sgd(X, y, C, hp, step)


def _predict_linear(clf, X):
    s = clf.state
    scores = X @ s.weights.T + s.bias
    return clf.classes_seen[np.argmax(scores, axis=1)]


def _scores_linear(clf, X):
    s = clf.state
    return X @ s.weights.T + s.bias


# random forest ----------------------------------------------------------

@dataclass
class _ForestState:
    trees: list  # nested dicts: {"leaf": id} or {"feature", "threshold", "left", "right"}


def _gini_split(Xcol, y, C):
    """Best threshold on one feature by weighted Gini; None when unsplittable."""
    order = np.argsort(Xcol, kind="stable")
    xs = Xcol[order]
    ys = y[order]
    n = len(ys)
    onehot = np.zeros((n, C))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)  # counts after taking i+1 smallest
    total = left[-1]
    cut = np.flatnonzero(xs[:-1] < xs[1:])  # split between distinct values
    if cut.size == 0:
        return None
    nl = (cut + 1).astype(np.float64)
    nr = n - nl
    gl = 1.0 - np.sum(left[cut] ** 2, axis=1) / nl**2
    gr = 1.0 - np.sum((total - left[cut]) ** 2, axis=1) / nr**2
    cost = (nl * gl + nr * gr) / n
    best = int(np.argmin(cost))
    thr = (xs[cut[best]] + xs[cut[best] + 1]) / 2.0
    return float(cost[best]), float(thr)


def _grow_tree(X, y, C, rng, max_depth, n_sub, depth=0):
    counts = np.bincount(y, minlength=C)
    majority = int(np.argmax(counts))  # ties fall to the lower id
    if counts[majority] == len(y) or (max_depth is not None and depth >= max_depth):
        return {"leaf": majority}
    feats = rng.permutation(X.shape[1])[:n_sub]
    best = None
    for f in feats:
        found = _gini_split(X[:, f], y, C)
        if found is not None and (best is None or found[0] < best[0]):
            best = (found[0], int(f), found[1])
    if best is None:
        return {"leaf": majority}
    _, f, thr = best
    go_left = X[:, f] <= thr
    return {
        "feature": f,
        "threshold": thr,
        "left": _grow_tree(X[go_left], y[go_left], C, rng, max_depth, n_sub, depth + 1),
        "right": _grow_tree(X[~go_left], y[~go_left], C, rng, max_depth, n_sub, depth + 1),
    }


def _fit_forest(hp: ForestParams, X, y, C):
    n, d = X.shape
    n_sub = hp.feature_subsample if hp.feature_subsample is not None else int(np.ceil(np.sqrt(d)))
    n_sub = min(n_sub, d)
    trees = []
    for t in range(hp.tree_count):
        rng = np.random.default_rng(np.random.SeedSequence([hp.seed, t]))
        bag = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[bag], y[bag], C, rng, hp.max_depth, n_sub))
    return _ForestState(trees=trees)


def _tree_predict(tree, x):
    node = tree
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]


def _forest_votes(clf, X):
    C = len(clf.classes_seen)
    votes = np.zeros((len(X), C))
    for tree in clf.state.trees:
        for i, x in enumerate(X):
            votes[i, _tree_predict(tree, x)] += 1.0
    return votes


def _predict_forest(clf, X):
    votes = _forest_votes(clf, X)
    return clf.classes_seen[np.argmax(votes, axis=1)]  # vote ties -> lower id


# k-nearest-neighbors -----------------------------------------------------

@dataclass
class _KnnState:
    features: np.ndarray
    labels: np.ndarray  # dense positions into classes_seen


def _nearest_indices(features: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows by Euclidean distance, ascending.

    Distance ties break toward the lower index; k larger than the row count
    clamps to all rows.
    """
    dist = np.sum((features - x) ** 2, axis=1)
    order = np.argsort(dist, kind="stable")
    return order[: min(k, len(features))]


def neighbors(ds: LabeledDataset, x, k: int) -> np.ndarray:
    """k nearest sample positions in ds for query x, nearest first."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != ds.d:
        raise DimMismatch(f"query has d={x.shape[0]}, dataset has d={ds.d}")
    if k < 1:
        raise BadHyperparams("k must be at least 1")
    return _nearest_indices(ds.features, x, k)


def _fit_knn(hp: KnnParams, X, y, C):
    return _KnnState(features=X.copy(), labels=y.copy())


def _knn_vote(clf, x):
    s = clf.state
    idx = _nearest_indices(s.features, x, clf.spec.hyperparams.k)
    votes = np.bincount(s.labels[idx], minlength=len(clf.classes_seen))
    top = votes.max()
    tied = np.flatnonzero(votes == top)
    winner = int(tied[0])
    if len(tied) > 1:
        for i in idx:  # vote tie: the tied class holding the nearest member wins
            if votes[s.labels[i]] == top:
                winner = int(s.labels[i])
                break
    return winner, votes


def _predict_knn(clf, X):
    return clf.classes_seen[[_knn_vote(clf, x)[0] for x in X]]


def _scores_knn(clf, X):
    return np.stack([_knn_vote(clf, x)[1] for x in X]).astype(np.float64)


_FITTERS = {
    SOFTMAX: _fit_softmax,
    LINEAR_SVM: _fit_svm,
    RANDOM_FOREST: _fit_forest,
    KNN: _fit_knn,
}

_PREDICTORS = {
    SOFTMAX: _predict_linear,
    LINEAR_SVM: _predict_linear,
    RANDOM_FOREST: _predict_forest,
    KNN: _predict_knn,
}

_SCORERS = {
    SOFTMAX: _scores_linear,
    LINEAR_SVM: _scores_linear,
    RANDOM_FOREST: _forest_votes,
    KNN: _scores_knn,
}


# serialization -----------------------------------------------------------

def _params_to_json(clf: TrainedClassifier) -> dict:
    if clf.spec.kind in (SOFTMAX, LINEAR_SVM):
        return {
            "weights": clf.state.weights.tolist(),
            "bias": clf.state.bias.tolist(),
            "loss_trace": clf.state.loss_trace,
        }
    if clf.spec.kind == RANDOM_FOREST:
        return {"trees": clf.state.trees}
    return {
        "features": clf.state.features.tolist(),
        "labels": clf.state.labels.tolist(),
    }


def classifier_to_json(clf: TrainedClassifier) -> dict:
    from dataclasses import asdict

    return {
        "kind": clf.spec.kind,
        "hyperparams": asdict(clf.spec.hyperparams),
        "classes_seen": clf.classes_seen.tolist(),
        "input_dim": clf.input_dim,
        "params": _params_to_json(clf),
    }


def classifier_from_json(obj: dict) -> TrainedClassifier:
    kind = obj["kind"]
    spec = ClassifierSpec(kind, _PARAM_TYPES[kind](**obj["hyperparams"]))
    params = obj["params"]
    if kind in (SOFTMAX, LINEAR_SVM):
        state = _LinearState(
            weights=np.asarray(params["weights"], dtype=np.float64),
            bias=np.asarray(params["bias"], dtype=np.float64),
            loss_trace=list(params["loss_trace"]),
        )
    elif kind == RANDOM_FOREST:
        state = _ForestState(trees=params["trees"])
    else:
        state = _KnnState(
            features=np.asarray(params["features"], dtype=np.float64),
            labels=np.asarray(params["labels"], dtype=np.int64),
        )
    return TrainedClassifier(
        spec=spec,
        classes_seen=np.asarray(obj["classes_seen"], dtype=np.int64),
        input_dim=int(obj["input_dim"]),
        state=state,
    )
