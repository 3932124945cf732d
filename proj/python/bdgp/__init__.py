"""Python bindings for the bdgp downscaling library.

Grids are 2-D float arrays with NaN marking invalid pixels; partitions are
integer label arrays with 0 for the background.
"""

import json

from ._bdgp import (
    ArgumentError,
    BdgpError,
    ConfigError,
    FormatError,
    IoError,
    NumericError,
    apply_blur,
    estimate_blurred_sigma,
    fit_region_mle,
    k_blurred,
    k_double_blurred,
    k_se,
    krige,
    neg_log_lik,
    read_raster,
    refine_masks,
    run_command,
    sample_bdgp,
    sigma_blur_from_fwhm,
    write_raster,
)


def verify(config=None, base_dir="."):
    """Run the synthetic blur-and-recover experiment and return its summary."""
    return run_command("verify", json.dumps(config or {}), str(base_dir))


__all__ = [name for name in dir() if not name.startswith("_")]
