"""Coordinate networks regularized by derivative-based total variation."""

from .dataio import ObservationTable, read_image, write_image
from .networks import (
    ARCHITECTURES,
    CoordinateNetwork,
    NetworkSpec,
    UnsupportedDerivative,
    init_network,
)
from .metrics import mse_rsquare, psnr, ssim
from .regularizers import (
    REGULARIZER_KINDS,
    RegularizerSpec,
    SpaceVariantField,
    build_regularizer,
)
from .sampling import MeshgridRequired, SampleSet, make_meshgrid
from .tape import Tape
from .tasks import (
    TASKS,
    TaskConfig,
    default_config,
    denoise_image,
    hsi_mixed_denoise,
    inpaint_image,
    paper_config,
    reconstruct_transcriptomics,
    recover_pointcloud,
)

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "CoordinateNetwork",
    "MeshgridRequired",
    "NetworkSpec",
    "ObservationTable",
    "REGULARIZER_KINDS",
    "RegularizerSpec",
    "SampleSet",
    "SpaceVariantField",
    "TASKS",
    "Tape",
    "TaskConfig",
    "UnsupportedDerivative",
    "build_regularizer",
    "default_config",
    "denoise_image",
    "hsi_mixed_denoise",
    "init_network",
    "inpaint_image",
    "make_meshgrid",
    "mse_rsquare",
    "paper_config",
    "psnr",
    "read_image",
    "reconstruct_transcriptomics",
    "recover_pointcloud",
    "ssim",
    "write_image",
    "__version__",
]
