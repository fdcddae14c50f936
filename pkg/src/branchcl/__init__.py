"""Desk-scale continual learning with branched low-rank adapters."""

from .adapters import (
    AdapterHyperparams,
    BranchLoRALayer,
    FrozenBackbone,
    LoRALayer,
    MoELoRALayer,
    init_adapter,
)
from .analysis import efficiency_report, expert_similarity, expert_vectors
from .checkpoint import load_model, save_model
from .config import (
    AdapterConfig,
    ExperimentConfig,
    StreamConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
    validate_config,
)
from .errors import (
    AnalysisError,
    BranchclError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    ParameterError,
    PolicyError,
    RoutingError,
    SelectorError,
)
from .harness import ImmutabilityGuard, aggregate_reports, evaluate, run_seed, train_task
from .metrics import EvalMatrix, Metrics, compute_metrics, task_wise_maa
from .model import KINDS, ContinualModel, ModelConfig, build_model
from .optim import Adam, Sgd, make_optimizer
from .routing import FreezeLedger, UsageStats, apply_freeze, select_freeze_set
from .selector import (
    KeyStore,
    SampleEmbeddings,
    TaskKeys,
    alignment_loss,
    select_task,
    selector_accuracy,
    total_loss,
)
from .stream import SyntheticTask, TaskStream, generate_stream, stream_fingerprint
from .tensor import (
    MASK_VALUE,
    Matrix,
    Tape,
    add,
    backward,
    cosine_similarity,
    cross_entropy,
    matmul,
    mix,
    mse_loss,
    reduce_mean,
    reduce_sum,
    row_softmax,
    scale,
    take_row,
    tanh,
    topk_mask,
)

__version__ = "0.1.0"
