"""Python bindings for the yoda_lab diffusion image-translation lab."""

import json

from . import _core
from ._core import (
    YodaError,
    add_noise,
    adjacent_slice_mse,
    estimate_wm_noise,
    harmonize,
    mean_average,
    mse,
    psnr,
    rms_average,
    run_cli,
    ssim3d,
)

__all__ = [
    "YodaError",
    "add_noise",
    "adjacent_slice_mse",
    "alpha_bars",
    "estimate_wm_noise",
    "generate_phantom",
    "harmonize",
    "mean_average",
    "mse",
    "nfe_count",
    "psnr",
    "rms_average",
    "run_cli",
    "sample_oracle",
    "ssim3d",
]

_LINEAR_1000 = {"kind": "linear", "T": 1000}


def alpha_bars(schedule=None):
    """Cumulative signal fractions of a schedule given as a dict."""
    return _core.alpha_bars(json.dumps(schedule or _LINEAR_1000))


def generate_phantom(spec=None, grid=(48, 48, 48), seed=0):
    """Phantom case as a dict of numpy arrays; `spec` defaults to the desk phantom."""
    if spec is None:
        spec = {"desk_default": {"grid": list(grid), "seed": seed}}
    return _core.generate_phantom(json.dumps(spec))


def sample_oracle(mean, conditions, prior_var, sampler=None, schedule=None, workers=1):
    """Samples with the Gaussian oracle denoiser; returns (volume, nfe)."""
    return _core.sample_oracle(
        mean, list(conditions), prior_var, json.dumps(sampler or {}), json.dumps(schedule or _LINEAR_1000), workers
    )


def nfe_count(sampler, steps=1000, regression_views=3):
    """Full-volume network evaluations a sampler configuration costs."""
    return _core.nfe_count(json.dumps(sampler), steps, regression_views)
