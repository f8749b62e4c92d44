"""asrroute: learn which ASR system to run on each audio segment.

Trains one boosted binary classifier per non-pivot system from per-segment
features and observed WERs, merges them with a cost-biased max-probability
rule, and optionally rescans expensive picks with a quality estimator.
"""

from ._kernels import BACKEND
from .datamodel import (
    Dataset,
    DatasetSchema,
    FeatureBundle,
    GeneratorConfig,
    PlantedRule,
    SegmentRecord,
    SystemOutcome,
    SystemProfile,
    best_system,
    load_dataset,
    oracle_labels,
    save_dataset,
    split_dataset,
    synthesize_dataset,
    validate_profiles,
)
from .ensemble import (
    ConstantQE,
    Decision,
    FileQE,
    OracleQE,
    RouterModel,
    add_system,
    decide,
    decide_batch,
    rescore,
)
from .features import FeatureSchema, assemble, confidence_summary, read_wav, signal_properties
from .gbm import (
    BinaryClassifier,
    Hyperparams,
    Tree,
    feature_importance,
    load_model,
    predict_proba,
    save_model,
    train_binary,
)
from .labeling import PairLabeling, make_pair_labels, sample_weights
from .metrics import (
    EvaluationReport,
    aggregate_report,
    normalize_text,
    weighted_f1,
    wer,
)

__version__ = "0.1.0"
