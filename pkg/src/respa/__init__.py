"""Simulator for kinetic-inductance superconducting resonator parametric amplifiers.

The package models a series-coupled half-wave transmission-line resonator with
a current-dependent (Kerr-type) inductance, pumped by one or two strong tones.
It solves the pumped steady state on a frequency comb by harmonic balance,
linearizes around it to obtain small-signal gain, idler conversion and
phase-sensitive amplification, and cross-checks everything against an
independent time-domain integrator.

Amplitude convention used everywhere: a mode amplitude ``a_m`` is normalized
so that ``|a_m|**2`` is the stored energy in joules, drive/output amplitudes
``b`` so that ``|b|**2`` is power in watts.  See ``docs/model_conventions.md``.
"""

from respa.geometry import (
    ResonatorGeometry,
    Mode,
    ModeSet,
    find_modes,
    linear_response,
)
from respa.kerr import KerrMatrix, reduce_kerr
from respa.comb import DriveTone, PumpComb, build_comb
from respa.balance import PumpCombSolution, solve_pump_steady_state, comb_output_spectrum
from respa.scattering import (
    GainProfile,
    PhaseSweepResult,
    gain_profile,
    phase_sensitive_gain,
    quadrature_decomposition,
    gain_bandwidth,
)
from respa.timedomain import TimeDomainRun, integrate, extract_tone

__version__ = "0.1.0"

__all__ = [
    "ResonatorGeometry",
    "Mode",
    "ModeSet",
    "find_modes",
    "linear_response",
    "KerrMatrix",
    "reduce_kerr",
    "DriveTone",
    "PumpComb",
    "build_comb",
    "PumpCombSolution",
    "solve_pump_steady_state",
    "comb_output_spectrum",
    "GainProfile",
    "PhaseSweepResult",
    "gain_profile",
    "phase_sensitive_gain",
    "quadrature_decomposition",
    "gain_bandwidth",
    "TimeDomainRun",
    "integrate",
    "extract_tone",
    "__version__",
]
