"""Complexity-perception classification.

The pipeline: train N = K*m weak base classifiers (m repetitions of a
seeded K-fold partition, each member fit on a single fold), score every
training sample by the fraction of members that classify it correctly,
split the training set at a threshold theta into easy and difficult
subspaces, fit one expert per subspace, and route each query at prediction
time with a per-query discriminator: if the query's k nearest training
points all landed in one subspace the route is immediate, otherwise a tiny
binary softmax trained on just those k points decides.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from . import classifiers as clf_mod
from .classifiers import (
    ClassifierSpec,
    SoftmaxParams,
    TrainedClassifier,
    _nearest_indices,
    classifier_from_json,
    classifier_to_json,
    with_seed,
)
from .dataset import LabeledDataset, kfold, take
from .errors import (
    BadK,
    BadSpec,
    DegenerateModel,
    DimMismatch,
    EmptyPartition,
    LengthMismatch,
)

INCLUDE_ALL = "include_all"
EXCLUDE_IN_FOLD = "exclude_in_fold"

SINGLE_FOLD = "single_fold"  # each member trains on one fold
COMPLEMENT = "complement"  # conventional alternative: train on the other K-1

ROUTE_EASY = "+"
ROUTE_DIFFICULT = "-"

# Per-query discriminator: full-batch softmax on the k neighbors.
DEFAULT_DISC = SoftmaxParams(
    learning_rate=0.05, epochs=200, batch_size=4096, l2=1e-2, momentum=0.5, seed=0
)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class TrainedOn:
    repetition: int
    fold: int
    indices: np.ndarray


@dataclass
class BaseEnsemble:
    members: list[TrainedClassifier]
    K: int
    m: int
    trained_on: list[TrainedOn]

    @property
    def N(self) -> int:
        return len(self.members)


def train_base_ensemble(
    train: LabeledDataset,
    K: int,
    m: int,
    base_spec: ClassifierSpec,
    seed: int = 0,
    fold_training: str = SINGLE_FOLD,
) -> BaseEnsemble:
    """Fit N = K*m members, one per (repetition, fold) pair.

    Each repetition draws a fresh seeded K-fold partition. The default
    trains every member on exactly one fold, i.e. the folds act as small
    training sets rather than held-out sets; fold_training="complement"
    gives the conventional K-1 fold training set instead.
    """
    if m < 1:
        raise BadSpec(f"m={m} must be at least 1")
    if fold_training not in (SINGLE_FOLD, COMPLEMENT):
        raise BadSpec(f"unknown fold_training {fold_training!r}")
    if not (2 <= K <= train.n):
        raise BadK(f"K={K} outside [2, n={train.n}]")
    members, trained_on = [], []
    for rep in range(m):
        fa = kfold(train, K, seed=_derive_seed(seed, 0, rep))
        for fold in range(K):
            if fold_training == SINGLE_FOLD:
                idx = fa.indices_of(fold)
            else:
                idx = fa.complement_of(fold)
            member_spec = with_seed(base_spec, _derive_seed(seed, 1, rep, fold))
            members.append(clf_mod.fit(member_spec, take(train, idx)))
            trained_on.append(TrainedOn(repetition=rep, fold=fold, indices=idx))
    return BaseEnsemble(members=members, K=K, m=m, trained_on=trained_on)


@dataclass(frozen=True)
class EaseScores:
    """Per-sample correct-member counts and their ratios in [0, 1].

    include_all divides by N; exclude_in_fold skips members whose training
    fold contained the sample, dividing by N - m.
    """

    correct_counts: np.ndarray
    ratios: np.ndarray
    N: int
    exclusion_mode: str

    @property
    def n(self) -> int:
        return len(self.ratios)


def compute_ease(
    ens: BaseEnsemble, train: LabeledDataset, mode: str = INCLUDE_ALL
) -> EaseScores:
    """Fraction of ensemble members that classify each training sample
    correctly. Exact integer counting; ratios are counts over the mode's
    denominator."""
    if mode not in (INCLUDE_ALL, EXCLUDE_IN_FOLD):
        raise BadSpec(f"unknown ease mode {mode!r}")
    n = train.n
    if any(rec.indices.size and rec.indices.max() >= n for rec in ens.trained_on):
        raise LengthMismatch("ensemble was built on a different training set")
    correct = np.zeros((ens.N, n), dtype=bool)
    for j, member in enumerate(ens.members):
        correct[j] = member.predict_many(train.features) == train.labels
    if mode == INCLUDE_ALL:
        counts = correct.sum(axis=0)
        denom = np.full(n, ens.N, dtype=np.int64)
    else:
        included = np.ones((ens.N, n), dtype=bool)
        for j, rec in enumerate(ens.trained_on):
            included[j, rec.indices] = False
        counts = (correct & included).sum(axis=0)
        denom = included.sum(axis=0)
        if np.any(denom <= 0):
            raise BadSpec("exclusion leaves no members for some sample")
    return EaseScores(
        correct_counts=counts.astype(np.int64),
        ratios=counts / denom,
        N=ens.N,
        exclusion_mode=mode,
    )


@dataclass
class SubspacePartition:
    """Threshold split of the training set: ratio >= theta goes easy."""

    dataset: LabeledDataset
    theta: float
    easy_indices: np.ndarray
    difficult_indices: np.ndarray

    def easy_dataset(self) -> LabeledDataset:
        return take(self.dataset, self.easy_indices)

    def difficult_dataset(self) -> LabeledDataset:
        return take(self.dataset, self.difficult_indices)


def partition(
    train: LabeledDataset, ease: EaseScores, theta: float
) -> SubspacePartition:
    """Split at theta; the boundary sample (ratio == theta) lands easy.

    Theta above 1 is allowed to force an all-difficult partition.
    """
    if ease.n != train.n:
        raise LengthMismatch(f"{ease.n} ease scores for {train.n} samples")
    if not 0.0 <= theta <= 2.0:
        raise BadSpec(f"theta={theta} outside [0, 2]")
    easy = np.flatnonzero(ease.ratios >= theta)
    difficult = np.flatnonzero(ease.ratios < theta)
    return SubspacePartition(
        dataset=train,
        theta=float(theta),
        easy_indices=easy,
        difficult_indices=difficult,
    )


DEGENERATE_NONE = "none"
ALL_EASY = "all_easy"
ALL_DIFFICULT = "all_difficult"


@dataclass
class CpcModel:
    theta: float
    easy_expert: TrainedClassifier | None
    difficult_expert: TrainedClassifier | None
    pooled_features: np.ndarray
    pooled_binary: np.ndarray  # 1 where the training sample fell easy, else 0
    discriminator_k: int
    discriminator_spec: SoftmaxParams
    seed: int
    degenerate: str = DEGENERATE_NONE

    @property
    def input_dim(self) -> int:
        return self.pooled_features.shape[1]


def fit_cpc(
    part: SubspacePartition,
    expert_spec: ClassifierSpec,
    disc_k: int = 25,
    disc_spec: SoftmaxParams = DEFAULT_DISC,
    seed: int = 0,
) -> CpcModel:
    """Fit the subspace experts and freeze the pooled routing points.

    Experts train with expert_spec exactly as given, so a degenerate
    partition reproduces the plain baseline classifier bit for bit.
    """
    n_easy = len(part.easy_indices)
    n_diff = len(part.difficult_indices)
    if n_easy == 0 and n_diff == 0:
        raise EmptyPartition("no samples in either subspace")
    if disc_k < 1:
        raise BadSpec(f"disc_k={disc_k} must be at least 1")
    easy_expert = (
        clf_mod.fit(expert_spec, part.easy_dataset()) if n_easy else None
    )
    difficult_expert = (
        clf_mod.fit(expert_spec, part.difficult_dataset()) if n_diff else None
    )
    degenerate = DEGENERATE_NONE
    if n_diff == 0:
        degenerate = ALL_EASY
    elif n_easy == 0:
        degenerate = ALL_DIFFICULT
    binary = np.zeros(part.dataset.n, dtype=np.int64)
    binary[part.easy_indices] = 1
    return CpcModel(
        theta=part.theta,
        easy_expert=easy_expert,
        difficult_expert=difficult_expert,
        pooled_features=part.dataset.features,
        pooled_binary=binary,
        discriminator_k=disc_k,
        discriminator_spec=disc_spec,
        seed=seed,
        degenerate=degenerate,
    )


def _query_seed(model_seed: int, x: np.ndarray) -> int:
    digest = hashlib.blake2b(x.tobytes(), digest_size=8).digest()
    return _derive_seed(model_seed, int.from_bytes(digest, "big"))


def discriminate(model: CpcModel, x) -> tuple[str, float]:
    """Route one query: (route, signed margin toward the easy side).

    Unanimous neighborhoods short-circuit with an infinite margin; mixed
    neighborhoods train a fresh binary softmax on just those k points,
    seeded from the model seed and the query bytes.
    """
    if model.degenerate != DEGENERATE_NONE:
        raise DegenerateModel("single-subspace model; route degenerately")
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1))
    if x.shape[0] != model.input_dim:
        raise DimMismatch(f"query has d={x.shape[0]}, model expects {model.input_dim}")
    idx = _nearest_indices(model.pooled_features, x, model.discriminator_k)
    nb_binary = model.pooled_binary[idx]
    if np.all(nb_binary == 1):
        return ROUTE_EASY, float("inf")
    if np.all(nb_binary == 0):
        return ROUTE_DIFFICULT, float("-inf")
    local = LabeledDataset(
        features=model.pooled_features[idx],
        labels=nb_binary,
        class_count=2,
    )
    disc_spec = ClassifierSpec(
        clf_mod.SOFTMAX,
        replace(model.discriminator_spec, seed=_query_seed(model.seed, x)),
    )
    disc = clf_mod.fit(disc_spec, local)
    scores = disc.decision_scores(x[None, :])[0]
    margin = float(scores[1] - scores[0])  # classes_seen is [0, 1] here
    route = ROUTE_EASY if disc.predict(x) == 1 else ROUTE_DIFFICULT
    return route, margin


@dataclass(frozen=True)
class RoutedPrediction:
    route: str
    label: int
    discriminator_margin: float


def cpc_predict(model: CpcModel, x) -> RoutedPrediction:
    """Route then defer to the routed expert."""
    if model.degenerate == ALL_EASY:
        return RoutedPrediction(
            ROUTE_EASY, model.easy_expert.predict(x), float("inf")
        )
    if model.degenerate == ALL_DIFFICULT:
        return RoutedPrediction(
            ROUTE_DIFFICULT, model.difficult_expert.predict(x), float("-inf")
        )
    route, margin = discriminate(model, x)
    expert = model.easy_expert if route == ROUTE_EASY else model.difficult_expert
    return RoutedPrediction(route, expert.predict(x), margin)


def cpc_predict_many(model: CpcModel, X) -> list[RoutedPrediction]:
    X = np.asarray(X, dtype=np.float64)
    return [cpc_predict(model, x) for x in X]


# end-to-end orchestration --------------------------------------------------

@dataclass(frozen=True)
class CpcConfig:
    base_spec: ClassifierSpec
    expert_spec: ClassifierSpec
    k_folds: int = 5
    repetitions: int = 3
    theta: float = 0.5
    disc_k: int = 25
    disc_spec: SoftmaxParams = DEFAULT_DISC
    ease_mode: str = INCLUDE_ALL
    fold_training: str = SINGLE_FOLD
    seed: int = 0


def train_cpc(train: LabeledDataset, cfg: CpcConfig) -> CpcModel:
    """Ensemble, ease scores, partition, experts, in one call."""
    ens = train_base_ensemble(
        train,
        cfg.k_folds,
        cfg.repetitions,
        cfg.base_spec,
        seed=cfg.seed,
        fold_training=cfg.fold_training,
    )
    ease = compute_ease(ens, train, mode=cfg.ease_mode)
    part = partition(train, ease, cfg.theta)
    return fit_cpc(
        part, cfg.expert_spec, disc_k=cfg.disc_k, disc_spec=cfg.disc_spec, seed=cfg.seed
    )


# serialization ---------------------------------------------------------------

def cpc_model_to_json(model: CpcModel) -> dict:
    from dataclasses import asdict

    return {
        "theta": model.theta,
        "degenerate": model.degenerate,
        "discriminator_k": model.discriminator_k,
        "discriminator_spec": asdict(model.discriminator_spec),
        "seed": model.seed,
        "easy_expert": (
            classifier_to_json(model.easy_expert) if model.easy_expert else None
        ),
        "difficult_expert": (
            classifier_to_json(model.difficult_expert)
            if model.difficult_expert
            else None
        ),
        "pooled_features": model.pooled_features.tolist(),
        "pooled_binary": model.pooled_binary.tolist(),
    }


def cpc_model_from_json(obj: dict) -> CpcModel:
    return CpcModel(
        theta=float(obj["theta"]),
        easy_expert=(
            classifier_from_json(obj["easy_expert"]) if obj["easy_expert"] else None
        ),
        difficult_expert=(
            classifier_from_json(obj["difficult_expert"])
            if obj["difficult_expert"]
            else None
        ),
        pooled_features=np.asarray(obj["pooled_features"], dtype=np.float64),
        pooled_binary=np.asarray(obj["pooled_binary"], dtype=np.int64),
        discriminator_k=int(obj["discriminator_k"]),
        discriminator_spec=SoftmaxParams(**obj["discriminator_spec"]),
        seed=int(obj["seed"]),
        degenerate=obj["degenerate"],
    )


def save_cpc_model(model: CpcModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(cpc_model_to_json(model), fh)
        fh.write("\n")


def load_cpc_model(path) -> CpcModel:
    with open(path) as fh:
        return cpc_model_from_json(json.load(fh))
