"""Lyapunov spectrum experiments for kinetic cocycles over flows."""

from ._kinetic import (
    ConfigError,
    collapse,
    distance,
    estimate_spectrum,
    lower,
    perturb,
    rotation_propagator,
    sigma_p,
    spectrum,
    usc_probe,
)

__all__ = [
    "ConfigError",
    "collapse",
    "distance",
    "estimate_spectrum",
    "lower",
    "perturb",
    "rotation_propagator",
    "sigma_p",
    "spectrum",
    "usc_probe",
]
