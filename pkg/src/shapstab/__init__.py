"""Seed-stability audit of SHAP feature rankings for boosted PD models."""

from .dataset import (
    CategoryEncoder,
    DesignMatrix,
    RawTable,
    SplitIndices,
    clean_education,
    load_dataset,
    one_hot_encode,
    stratified_split,
)
from .gbdt import (
    TrainConfig,
    Tree,
    TreeEnsemble,
    predict_margin,
    predict_margins,
    predict_proba,
    train,
)
from .metrics import (
    ConfusionCounts,
    DecileTable,
    MetricSuite,
    auroc,
    confusion_at_threshold,
    decile_ks,
)
from .stability import (
    ConcordanceReport,
    RankFrequencyTable,
    RankMatrix,
    chi_square_test,
    kendalls_w,
    rank_features,
    rank_frequency,
    subgroup_concordance,
)
from .treeshap import (
    GlobalImportance,
    ShapMatrix,
    ShapRow,
    brute_force_shap,
    global_importance,
    shap_matrix,
    shap_values,
)

__version__ = "0.1.0"
