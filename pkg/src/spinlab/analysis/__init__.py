"""Curve fitting, baseline removal and spectral peak analysis."""

from .fitting import FitResult, Model, ModelSpec, as_xy, fit, r_squared
from .models import (
    BIEXP,
    FITTERS,
    MONOEXP,
    RABI,
    SINC2,
    STRETCHED_EXP_COS,
    biexp_func,
    fit_biexp,
    fit_gaussians,
    fit_lorentzian_sum,
    fit_monoexp,
    fit_multi_gaussian,
    fit_power_law,
    fit_rabi,
    fit_sinc2,
    fit_stretched_exp_cos,
    gaussians_model,
    line_spacing,
    lorentzian_center,
    lorentzians_model,
    model_function,
    monoexp_func,
    power_func,
    rabi_func,
    sinc2_func,
    stretched_exp_cos_func,
)
from .spectral import BaselineWarning, Spectrum, baseline_subtract, fft_peak, local_maxima, power_spectrum

__all__ = [
    "BIEXP", "FITTERS", "MONOEXP", "RABI", "SINC2", "STRETCHED_EXP_COS",
    "BaselineWarning", "FitResult", "Model", "ModelSpec", "Spectrum",
    "as_xy", "baseline_subtract", "biexp_func", "fft_peak", "fit", "fit_biexp", "fit_gaussians",
    "fit_lorentzian_sum", "fit_monoexp", "fit_multi_gaussian", "fit_power_law", "fit_rabi", "fit_sinc2",
    "fit_stretched_exp_cos", "gaussians_model", "line_spacing", "local_maxima", "lorentzian_center",
    "lorentzians_model", "model_function", "monoexp_func", "power_func", "power_spectrum", "r_squared",
    "rabi_func", "sinc2_func", "stretched_exp_cos_func",
]
