"""Imbalanced classification and regression via cost-sensitive forests and
discriminative sparse neighbor approximation."""

from .approx import (
    AffineHull,
    Cluster,
    DsnaSolution,
    decode_label,
    discriminative_cluster,
    dsna_from_neighborhood,
    dsna_predict,
    fit_affine_hull,
    hull_project,
    label_aware_distance,
    neighbor_prior,
    solve_sparse_approx,
)
from .core import (
    CLASSIFICATION,
    REGRESSION,
    ConfigError,
    Dataset,
    DatasetError,
    DsnaConfig,
    ForestConfig,
    MetricsReport,
    Sample,
    Scaler,
    evaluate_metrics,
    load_dataset,
    standardize_features,
)
from .forest import (
    CostSensitiveForest,
    DecisionTree,
    InternalNode,
    LeafNode,
    Neighborhood,
    baseline_predict,
    merge_neighborhood,
    reweighted_information_gain,
    select_split_features,
    split_classification_node,
    split_regression_node,
    train_forest,
    traverse,
)
from .harness import (
    AblationReport,
    SyntheticSpec,
    gen_imbalanced_gaussians,
    gen_imbalanced_regression,
    run_ablation,
    unsupervised_ah_predict,
    write_ablation_report,
)
from .model_io import (
    ModelFile,
    ModelFormatError,
    ModelIntegrityError,
    ModelVersionError,
    load_model,
    save_model,
)
from .solvers import (
    DegenerateInput,
    LinearModel,
    SolveDiagnostics,
    cost_weight,
    fit_weighted_svm,
    fit_weighted_svr,
)

__version__ = "0.1.0"
