"""Train tabular classifiers, explain them several ways, and measure how much the explanations agree."""

from xai_concord.agreement import (
    AgreementReport,
    ExpertSet,
    GlobalExplanation,
    TopList,
    aggregate_global,
    expert_concordance,
    feature_agreement,
    pairwise_report,
    rank_agreement,
    top_n,
)
from xai_concord.dataset import (
    Dataset,
    FeatureSpec,
    StandardizationParams,
    SyntheticSpec,
    load_csv,
    standardize,
    synthesize,
    write_csv,
)
from xai_concord.explainers import (
    AttributionMatrix,
    AttributionVector,
    Background,
    coalition_value,
    dtd_attribute,
    explain_dataset,
    linear_attribute,
    shapley_exact,
    shapley_sampled,
)
from xai_concord.models import (
    LinearModel,
    NeuralNet,
    TrainConfig,
    TreeEnsemble,
    predict_proba,
    raw_score,
    train_gbt,
    train_l1_logistic,
    train_nn,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "AttributionMatrix",
    "AttributionVector",
    "Background",
    "Dataset",
    "ExpertSet",
    "FeatureSpec",
    "GlobalExplanation",
    "LinearModel",
    "NeuralNet",
    "StandardizationParams",
    "SyntheticSpec",
    "TopList",
    "TrainConfig",
    "TreeEnsemble",
    "aggregate_global",
    "coalition_value",
    "dtd_attribute",
    "expert_concordance",
    "explain_dataset",
    "feature_agreement",
    "linear_attribute",
    "load_csv",
    "pairwise_report",
    "predict_proba",
    "rank_agreement",
    "raw_score",
    "shapley_exact",
    "shapley_sampled",
    "standardize",
    "synthesize",
    "top_n",
    "train_gbt",
    "train_l1_logistic",
    "train_nn",
    "write_csv",
]
