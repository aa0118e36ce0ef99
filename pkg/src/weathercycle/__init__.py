"""Unpaired multi-weather image restoration with luminance/chrominance cycles."""
from .colorspace import rgb_to_ycbcr, swap_luma, ycbcr_to_rgb
from .generators import ModelConfig, NetConfig, WeatherCycleModel
from .spectral import fft2, ifft2, swap_amplitude
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "NetConfig", "TrainConfig", "WeatherCycleModel", "fft2", "ifft2",
    "rgb_to_ycbcr", "swap_amplitude", "swap_luma", "ycbcr_to_rgb",
]
