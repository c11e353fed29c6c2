"""Training of l2-regularized linear-chain CRFs by stochastic dual coordinate
ascent over clique marginals, with an exact single-oracle line search and
adaptive duality-gap sampling."""

from .data import (
    CrfModel,
    Dataset,
    SyntheticSpec,
    Vocabulary,
    generate_synthetic,
    load_conll,
    load_model,
    load_ocr,
    save_model,
    split_dataset,
    write_conll,
)
from .inference import (
    MarginalSet,
    entropy_marginals,
    enumerate_oracle,
    joint_from_marginals,
    kl_marginals,
    marginal_oracle,
    viterbi,
)
from .metrics import MetricsRecord, MetricsWriter, read_metrics, token_error_rate
from .model import (
    FeatureIndexer,
    LabelSet,
    Sequence,
    SparseFeature,
    Token,
    corrected_feature,
    extract_features,
    score_tables,
)
from .objective import (
    CrfProblem,
    DualState,
    OracleCounter,
    WeightVector,
    batch_evaluate,
    block_gap,
    conjugate_weights,
    dual_objective,
    gradient_gap_identity_check,
    primal_gradient,
    primal_objective,
)
from .sampling import (
    RadiusTable,
    SamplerConfig,
    estimate_radius,
    nonuniformity,
    radius_table,
    sample_block,
    sampling_probabilities,
)
from .sdca import (
    LineSearchConfig,
    StepRecord,
    TrainConfig,
    TrainResult,
    ascent_direction,
    fixed_step,
    init_dual,
    line_search,
    primal_direction,
    sdca_train,
)

__version__ = "0.1.0"
