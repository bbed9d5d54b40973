"""All-side image extrapolation with a windowed-attention encoder/decoder
and a recurrent bottleneck feature extrapolator."""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig, full_config, toy_config  # noqa: F401
from .generator import Generator  # noqa: F401
from .geometry import OutpaintGeometry, feature_grid, make_masked_input  # noqa: F401
from .losses import LossWeights  # noqa: F401
