"""Adaptive wobble-board sensor node: inference engine, runtime, power model."""

from .balance import BalanceConfig, BalanceResult, balance_percent, detect_stop
from .model import (
    ExerciseClass,
    ModelSpec,
    classify_recording,
    infer_counts,
    infer_window,
    load_weights,
    serialize_weights,
)
from .power import (
    FeasibilityError,
    PowerParams,
    PowerReport,
    min_feasible_frequency,
    om_power,
    reconcile,
    savings,
)
from .qnn import (
    ConvWeights,
    QuantParams,
    QuantizedTensor,
    RequantSpec,
    conv1d,
    dequantize,
    flatten,
    fully_connected,
    maxpool1d,
    quantize,
    requantize,
)
from .runtime import (
    OperatingMode,
    Scenario,
    build_topology,
    load_scenario,
    pack_raw,
    parse_scenario,
    run_scenario,
)
from .signals import (
    AugmentConfig,
    GeneratorConfig,
    Recording,
    Sample,
    Window,
    augment_dataset,
    downsample,
    frame_windows,
    generate_recording,
    rotate,
    split_dataset,
)

__version__ = "0.1.0"
