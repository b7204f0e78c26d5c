"""Tree-ensemble intrusion detection toolkit.

Library surface for the full pipeline: ingestion of CAN-frame and flow
feature traffic, oversampling, CART / random-forest / extra-trees / boosted
learners, stacking, averaged-importance feature selection, cross-validated
evaluation, model persistence, and streaming detection.
"""

from .cart import (
    DecisionTree,
    SplitCandidate,
    TreeParams,
    best_split,
    cost_complexity,
    entropy_impurity,
    fit_tree,
    gini_impurity,
    predict_tree,
    tree_feature_importance,
)
from .core_data import (
    Dataset,
    FeatureSchema,
    FoldPlan,
    NormalizationParams,
    compute_min_max,
    drop_invalid_rows,
    normalize,
    stratified_folds,
)
from .ensemble import (
    BoostedModel,
    BoostParams,
    ForestModel,
    ensemble_feature_importance,
    fit_boosted,
    fit_extra_trees,
    fit_random_forest,
    majority_vote,
    predict_boosted,
)
from .errors import InputError, SchemaMismatchError, TreeIdsError
from .evaluation import (
    ConfusionMatrix,
    CrossValResult,
    GridSearchResult,
    MetricsReport,
    compute_metrics,
    confusion_matrix,
    cross_validate,
    grid_search,
)
from .ingest import (
    CanFrameRecord,
    FlowRecord,
    LabelMapSpec,
    consolidate_labels,
    encode_can_features,
    parse_can_csv,
    parse_flow_csv,
)
from .model_io import (
    ModelArtifact,
    load_model,
    load_prepared,
    save_model,
    save_prepared,
)
from .models import ModelSpec, fit_model
from .resample import ResamplePlan, random_oversample, smote_oversample
from .stack_select import (
    ImportanceReport,
    SingularReport,
    StackingModel,
    average_importance,
    fit_stacking,
    generate_oof_features,
    per_attack_importance,
    predict_stacking,
    select_base_and_meta,
    select_features,
)

__version__ = "0.1.0"
