"""fsfl: filter-scaled sparse federated learning at desk scale.

A simulator and library for communication-efficient federated learning:
local training on a minimal float64 autograd engine, differential updates,
structured/unstructured/top-k/ternary sparsification, uniform quantization,
context-adaptive entropy coding into real byte streams, validation-gated
per-filter scaling training, and uniform federated averaging, plus FedAvg
and sparse-ternary baselines for trade-off measurements.
"""

from .autograd import (
    Tensor,
    add,
    assert_finite,
    batch_norm2d,
    conv2d,
    dense,
    flatten,
    max_pool2d,
    mul,
    relu,
    softmax_cross_entropy,
    tensor_sum,
    weighted_sum,
)
from .codec import (
    FINE_STEP,
    WEIGHT_STEP_BIDIRECTIONAL,
    WEIGHT_STEP_UNIDIRECTIONAL,
    BitstreamError,
    QuantizedTensor,
    decode,
    dequantize,
    dequantize_tensors,
    encode,
    inspect,
    quantize,
    quantize_delta,
    quantize_tensor,
)
from .config import ExperimentConfig, load_config
from .data import Dataset, DatasetSpec, build_dataset, iter_batches, partition_pool
from .experiment import ExperimentResult, run_experiment, summarize
from .models import (
    ManifestMismatchError,
    Model,
    build_preset,
    load_params,
    param_add,
    param_diff,
    save_params,
)
from .optim import Adam, SgdMomentum, make_optimizer
from .protocol import (
    ClientState,
    FederatedRunner,
    LoopbackTransport,
    ProtocolConfig,
    TrainingDiverged,
    aggregate_deltas,
    evaluate_accuracy,
)
from .report import render_report
from .schedules import Schedule
from .sparsify import (
    SparsifyConfig,
    SparsityReport,
    measure_sparsity,
    sparsify,
    structured_threshold,
    unstructured_threshold,
)

__version__ = "0.1.0"
