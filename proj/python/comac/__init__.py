"""Python bindings for the comac continual test-time adaptation core."""

from ._core import (
    AlignmentError,
    ConfigError,
    ContractViolation,
    DivergenceError,
    InsufficientSupport,
    check_config,
    compute_miou,
    contrastive_loss,
    default_config,
    impa_fuse,
    impa_weights,
    normalize_rows,
    pretrain_accuracy,
    run_experiment,
    selftest,
    softmax_rows,
    stream_sample,
    variants,
    xmpf_fuse,
    xmpf_weight,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
