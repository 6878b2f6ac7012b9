"""Evaluation metrics: PSNR, SSIM, normalized RMSE, and R-square."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

__all__ = ["MetricsReport", "psnr", "ssim", "mse_rsquare"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_shapes(reference, estimate):
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ValueError(
            f"shape mismatch: reference {reference.shape} vs estimate {estimate.shape}"
        )
    return reference, estimate


def psnr(reference, estimate, peak=1.0):
    """Peak signal-to-noise ratio in dB; +inf when the arrays are identical."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    reference, estimate = _check_shapes(reference, estimate)
    mse = float(np.mean(np.square(reference - estimate)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(reference, estimate, peak=1.0):
    """Mean local structural similarity over valid 11x11 Gaussian windows."""
    reference, estimate = _check_shapes(reference, estimate)
    if reference.ndim != 2:
        raise ValueError("ssim expects 2-D arrays; pass channels one at a time")
    if min(reference.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window: {reference.shape}"
        )
    window = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def smooth(arr):
        return convolve2d(arr, window, mode="valid")

    mu_x = smooth(reference)
    mu_y = smooth(estimate)
    var_x = smooth(reference * reference) - mu_x * mu_x
    var_y = smooth(estimate * estimate) - mu_y * mu_y
    cov = smooth(reference * estimate) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(np.mean(score))


def mse_rsquare(reference, predicted):
    """(range-normalized RMSE, R-square) for paired value vectors.

    RMSE is divided by max - min of the reference, so a constant reference is
    rejected; R-square uses the usual 1 - SS_res / SS_tot.
    """
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if reference.shape != predicted.shape:
        raise ValueError("reference and predicted lengths differ")
    if reference.size < 2:
        raise ValueError("need at least two values")
    spread = float(np.max(reference) - np.min(reference))
    if spread == 0.0:
        raise ValueError("constant reference: normalized RMSE and R-square undefined")
    rmse = float(np.sqrt(np.mean(np.square(reference - predicted))))
    ss_res = float(np.sum(np.square(reference - predicted)))
    ss_tot = float(np.sum(np.square(reference - np.mean(reference))))
    return rmse / spread, 1.0 - ss_res / ss_tot


@dataclass
class MetricsReport:
    """Flat bundle of scores, with optional per-channel breakdown."""

    psnr: float = None
    ssim: float = None
    nrmse: float = None
    r_square: float = None
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ssim is not None and not -1.0 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if self.r_square is not None and self.r_square > 1.0 + 1e-12:
            raise ValueError(f"r_square above 1: {self.r_square}")
        if self.nrmse is not None and self.nrmse < 0.0:
            raise ValueError(f"negative nrmse: {self.nrmse}")

    def as_dict(self):
        out = {}
        for key in ("psnr", "ssim", "nrmse", "r_square"):
            value = getattr(self, key)
            if value is not None:
                out[key] = float(value)
        for channel, scores in self.channels.items():
            for key, value in scores.items():
                out[f"channel{channel}.{key}"] = float(value)
        return out
