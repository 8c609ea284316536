"""Complexity-perception classification toolkit.

Scores training samples by how many weak ensemble members get them right,
splits the training set into easy and difficult subspaces at a threshold,
fits one expert per subspace, and routes test queries with a per-query
nearest-neighbor discriminator.
"""

from .classifiers import (
    ClassifierSpec,
    ForestParams,
    KnnParams,
    SoftmaxParams,
    SvmParams,
    TrainedClassifier,
    fit,
    forest_spec,
    knn_spec,
    neighbors,
    softmax_spec,
    svm_spec,
    with_seed,
)
from .cpc import (
    BaseEnsemble,
    CpcConfig,
    CpcModel,
    EaseScores,
    RoutedPrediction,
    SubspacePartition,
    compute_ease,
    cpc_predict,
    cpc_predict_many,
    discriminate,
    fit_cpc,
    partition,
    train_base_ensemble,
    train_cpc,
)
from .dataset import (
    FoldAssignment,
    LabeledDataset,
    SplitSpec,
    generate_two_regime,
    kfold,
    load_dataset,
    split,
    take,
    two_regime_centers,
    write_dataset,
)
from .harness import (
    ConfusionMatrix,
    CvResult,
    EvalReport,
    PipelineConfig,
    SweepResult,
    compare,
    confusion,
    cross_validate,
    evaluate,
    theta_sweep,
)
from .mlp import (
    BlockSpec,
    MlpModel,
    TrainConfig,
    backward,
    build_mlp,
    extract_features,
    forward,
    parse_arch,
    train,
)
from .preprocess import (
    WhiteningTransform,
    apply_whitening,
    fit_zca,
    normalize_samples,
)

__version__ = "0.1.0"
