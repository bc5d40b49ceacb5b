"""Weak-supervision loss kit: Python bindings for the C++ core."""

try:
    from ._dealkit import *  # noqa: F401,F403  (installed package layout)
    from ._dealkit import __doc__ as _core_doc
except ImportError:  # build-tree layout: extension next to this package
    from _dealkit import *  # noqa: F401,F403
    from _dealkit import __doc__ as _core_doc

__all__ = [
    "deal_loss",
    "deal_loss_grad",
    "fsl_loss",
    "fsl_loss_grad",
    "isl_loss",
    "mlsm_loss",
    "eta",
    "gaussian_weight",
    "bicubic_resize",
    "sobel_magnitude",
    "minmax_normalize",
    "generate_scene",
    "generate_dataset",
    "threshold_cam",
    "threshold_sweep",
    "miou",
    "read_pfm",
    "write_pfm",
    "read_ppm",
    "write_ppm",
    "train_run",
]
