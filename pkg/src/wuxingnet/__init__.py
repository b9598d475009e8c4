"""Networks of five-element ODE neurons trained by backward signal propagation."""

from .dynamics import NeuronParams, backward_derivative, deviation, fixed_point, forward_derivative, step
from .engine import (
    DriveSet,
    SimulationConfig,
    TraceSet,
    classify,
    output_integrals,
    simulate_backward,
    simulate_forward,
)
from .topology import (
    Connection,
    NetworkTopology,
    build_named_model,
    build_random,
    link_ratio,
    reverse,
    validate,
)
from .trainer import (
    TrainConfig,
    apply_update,
    causal_quantity,
    clamp_update,
    evaluate,
    run_training,
    train_epoch,
)
from .baseline_mlp import lr_sweep, make_masked_mlp

__version__ = "0.1.0"
