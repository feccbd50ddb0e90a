"""Linear model of a series-coupled half-wave transmission-line resonator.

The device is a length of superconducting line coupled through series
capacitors to the measurement environment at both ends.  This module extracts
its resonant modes (frequency, external coupling rate, internal loss rate)
from the distributed two-port network and provides the linear single-port
response used as the unity-gain baseline by the nonlinear solvers.

Resonance frequencies are found as roots of the round-trip phase condition

    2*beta(w)*length + arg(Gamma_in) + arg(Gamma_out) = 2*pi*n

where ``Gamma`` is the reflection coefficient seen by the line looking into a
coupling capacitor terminated by the environment impedance.  External coupling
rates follow from the round-trip power leakage through each end,
``kappa_c = (1 - |Gamma|^2) / t_roundtrip``, the standard Fabry-Perot result,
accurate to O(1/Q).  A brute-force |S21| scan of the full ABCD network is kept
in the test-suite as the independent cross-check of both quantities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Geometry parameters violate a physical invariant."""


class ModeSearchError(RuntimeError):
    """Root bracketing failed for one harmonic; carries the harmonic index."""

    def __init__(self, harmonic: int, message: str):
        super().__init__(f"harmonic {harmonic}: {message}")
        self.harmonic = harmonic


class ModeOverlapError(RuntimeError):
    """Two extracted modes lie within one linewidth of each other."""


@dataclass(frozen=True)
class ResonatorGeometry:
    """Physical description of the coupled half-wave resonator.

    Parameters
    ----------
    length : float
        Line length in m.
    l_per_len : float
        Total inductance per unit length (geometric + kinetic) in H/m.
    c_per_len : float
        Capacitance per unit length in F/m.
    c_couple_in, c_couple_out : float
        Series coupling capacitances in F (0 allowed = uncoupled end).
    q_internal : float
        Dimensionless internal quality factor (may be ``inf`` for lossless).
    z_env : float
        Environment / system impedance in ohm.
    i_star : float
        Current scale of the inductance nonlinearity in A.
    """

    length: float
    l_per_len: float
    c_per_len: float
    c_couple_in: float
    c_couple_out: float
    q_internal: float
    z_env: float
    i_star: float

    def __post_init__(self):
        for name in ("length", "l_per_len", "c_per_len", "z_env", "i_star"):
            if not getattr(self, name) > 0.0:
                raise GeometryError(f"{name} must be strictly positive")
        if self.c_couple_in < 0.0 or self.c_couple_out < 0.0:
            raise GeometryError("coupling capacitances must be >= 0")
        if not self.q_internal >= 1.0:
            raise GeometryError("q_internal must be >= 1")
        if not math.isfinite(self.phase_velocity):
            raise GeometryError("phase velocity must be finite")

    @property
    def phase_velocity(self) -> float:
        """TEM phase velocity 1/sqrt(L'C') in m/s."""
        return 1.0 / math.sqrt(self.l_per_len * self.c_per_len)

    @property
    def z_line(self) -> float:
        """Characteristic impedance sqrt(L'/C') of the line in ohm."""
        return math.sqrt(self.l_per_len / self.c_per_len)

    @property
    def free_spectral_range(self) -> float:
        """Angular spacing pi*v/length of the unloaded harmonic ladder (rad/s)."""
        return math.pi * self.phase_velocity / self.length

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Mode:
    """One extracted resonant mode.

    ``current_profile_id`` names the standing-wave current shape; a uniform
    line with current nodes at both coupled ends carries ``sin(n*pi*x/length)``.
    """

    index: int
    omega0: float
    kappa_c: float
    kappa_i: float
    current_profile_id: str

    def __post_init__(self):
        if self.index < 1:
            raise GeometryError("mode index must be a positive integer")
        if not self.omega0 > 0.0:
            raise GeometryError("omega0 must be positive")
        if self.kappa_c < 0.0 or self.kappa_i < 0.0:
            raise GeometryError("loss rates must be >= 0")
        if self.kappa / self.omega0 >= 0.1:
            raise GeometryError(
                f"mode {self.index}: kappa/omega0 = {self.kappa / self.omega0:.3g} "
                "violates the narrow-resonance requirement (< 0.1)"
            )

    @property
    def kappa(self) -> float:
        """Total linewidth kappa_c + kappa_i in rad/s."""
        return self.kappa_c + self.kappa_i


@dataclass(frozen=True)
class ModeSet:
    """Ordered collection of modes plus the geometry they came from."""

    modes: tuple
    geometry: ResonatorGeometry

    def __post_init__(self):
        omegas = [m.omega0 for m in self.modes]
        if any(b <= a for a, b in zip(omegas, omegas[1:])):
            raise GeometryError("mode frequencies must be strictly increasing")

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    @property
    def omega0(self) -> np.ndarray:
        return np.array([m.omega0 for m in self.modes])

    @property
    def kappa_c(self) -> np.ndarray:
        return np.array([m.kappa_c for m in self.modes])

    @property
    def kappa_i(self) -> np.ndarray:
        return np.array([m.kappa_i for m in self.modes])

    @property
    def kappa(self) -> np.ndarray:
        return self.kappa_c + self.kappa_i

    def mode_with_index(self, n: int) -> Mode:
        for m in self.modes:
            if m.index == n:
                return m
        raise KeyError(f"no mode with harmonic index {n}")

    def to_json(self) -> str:
        payload = {
            "geometry": self.geometry.to_dict(),
            "modes": [
                {
                    "index": m.index,
                    "omega0": m.omega0,
                    "kappa_c": m.kappa_c,
                    "kappa_i": m.kappa_i,
                    "current_profile_id": m.current_profile_id,
                }
                for m in self.modes
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModeSet":
        payload = json.loads(text)
        geom = ResonatorGeometry(**payload["geometry"])
        modes = tuple(Mode(**m) for m in payload["modes"])
        return cls(modes=modes, geometry=geom)


# --- two-port ABCD network -------------------------------------------------

def _termination_reflection(geom: ResonatorGeometry, omega, c_couple):
    """Reflection seen from inside the line toward one coupling cap + z_env.

    For ``c_couple == 0`` the end is a perfect open, Gamma = 1.
    """
    omega = np.asarray(omega, dtype=float)
    if c_couple == 0.0:
        return np.ones_like(omega, dtype=complex)
    z_t = geom.z_env + 1.0 / (1j * omega * c_couple)
    return (z_t - geom.z_line) / (z_t + geom.z_line)


def network_abcd(geom: ResonatorGeometry, omega, lossy: bool = True):
    """ABCD matrix of series C_in -- line -- series C_out at angular frequency omega.

    Line loss enters through alpha = beta/(2*q_internal), the attenuation that
    reproduces the internal quality factor of the distributed resonance.
    Returns an array of shape ``omega.shape + (2, 2)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    beta = omega / geom.phase_velocity
    alpha = beta / (2.0 * geom.q_internal) if (lossy and math.isfinite(geom.q_internal)) else 0.0
    gamma_l = (alpha + 1j * beta) * geom.length
    z0 = geom.z_line

    if geom.c_couple_in == 0.0 or geom.c_couple_out == 0.0:
        raise GeometryError("ABCD network requires finite coupling capacitances")

    cosh = np.cosh(gamma_l)
    sinh = np.sinh(gamma_l)
    abcd = np.empty(omega.shape + (2, 2), dtype=complex)
    abcd[..., 0, 0] = cosh
    abcd[..., 0, 1] = z0 * sinh
    abcd[..., 1, 0] = sinh / z0
    abcd[..., 1, 1] = cosh

    def series(z):
        m = np.zeros(omega.shape + (2, 2), dtype=complex)
        m[..., 0, 0] = 1.0
        m[..., 0, 1] = z
        m[..., 1, 1] = 1.0
        return m

    z_in = 1.0 / (1j * omega * geom.c_couple_in)
    z_out = 1.0 / (1j * omega * geom.c_couple_out)
    return series(z_in) @ abcd @ series(z_out)


def network_s21(geom: ResonatorGeometry, omega, lossy: bool = True):
    """Transmission coefficient of the two-port network between z_env terminations."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if geom.c_couple_in == 0.0 or geom.c_couple_out == 0.0:
        return np.zeros_like(omega, dtype=complex)
    m = network_abcd(geom, omega, lossy=lossy)
    z = geom.z_env
    den = m[..., 0, 0] + m[..., 0, 1] / z + m[..., 1, 0] * z + m[..., 1, 1]
    return 2.0 / den


# --- mode extraction ---------------------------------------------------------

def find_modes(geom: ResonatorGeometry, n_max: int) -> ModeSet:
    """Extract modes n = 1..n_max of the coupled resonator.

    Each resonance is the n-th root of the round-trip phase condition of the
    two-port network, bracketed within +-25% of the free spectral range around
    the unloaded estimate ``n*pi*v/length`` and polished to better than one
    part in 1e10.  ``kappa_c`` sums the leakage through both coupling caps,
    ``kappa_i = omega0/q_internal``.

    Raises
    ------
    ModeSearchError
        If the bracket does not contain a sign change for some harmonic.
    ModeOverlapError
        If two extracted modes lie within one linewidth of each other.
    """
    if n_max < 1:
        raise GeometryError("n_max must be >= 1")

    v = geom.phase_velocity
    fsr = geom.free_spectral_range

    def roundtrip_phase(omega):
        g_in = _termination_reflection(geom, omega, geom.c_couple_in)
        g_out = _termination_reflection(geom, omega, geom.c_couple_out)
        beta = omega / v
        return (
            2.0 * beta * geom.length - float(np.angle(g_in)) - float(np.angle(g_out))
        )

    def phase_residual(omega, n):
        # round trip: exp(-2i*beta*l) * Gamma_in * Gamma_out = 1
        return roundtrip_phase(omega) - TWO_PI * n

    modes = []
    for n in range(1, n_max + 1):
        w_guess = n * math.pi * v / geom.length
        lo, hi = w_guess - 0.25 * fsr, w_guess + 0.25 * fsr
        f_lo, f_hi = phase_residual(lo, n), phase_residual(hi, n)
        if f_lo * f_hi > 0.0:
            raise ModeSearchError(
                n, f"no sign change in bracket [{lo:.6e}, {hi:.6e}] rad/s"
            )
        omega0 = brentq(phase_residual, lo, hi, args=(n,), xtol=1e-3, rtol=1e-14)

        # effective round-trip time includes the reflection group delay
        dw = max(omega0 * 1e-8, 1.0)
        t_roundtrip = (roundtrip_phase(omega0 + dw) - roundtrip_phase(omega0 - dw)) / (
            2.0 * dw
        )
        kappa_c = 0.0
        for c in (geom.c_couple_in, geom.c_couple_out):
            gam = _termination_reflection(geom, omega0, c)
            kappa_c += float(1.0 - np.abs(gam) ** 2) / t_roundtrip
        kappa_i = omega0 / geom.q_internal if math.isfinite(geom.q_internal) else 0.0

        modes.append(
            Mode(
                index=n,
                omega0=float(omega0),
                kappa_c=kappa_c,
                kappa_i=kappa_i,
                current_profile_id=f"sin-{n}",
            )
        )

    for a, b in zip(modes, modes[1:]):
        if b.omega0 - a.omega0 < max(a.kappa, b.kappa):
            raise ModeOverlapError(
                f"modes {a.index} and {b.index} overlap within one linewidth"
            )

    return ModeSet(modes=tuple(modes), geometry=geom)


# --- linear responses --------------------------------------------------------

def linear_response(modes: ModeSet, omega):
    """Single-port reflection response of the unpowered resonator.

    Implemented as the product of single-mode reflection factors

        s(w) = prod_m [ 1 - kappa_c,m / (i(w - omega0,m) + kappa_m/2) ]

    which is exactly passive (|s| <= 1 for any loss, |s| = 1 when lossless)
    and agrees with the additive mode sum to first order in kappa/mode
    spacing.  For a single isolated mode the two forms coincide.
    """
    omega = np.asarray(omega, dtype=float)
    s = np.ones_like(omega, dtype=complex)
    for m in modes:
        s = s * (1.0 - m.kappa_c / (1j * (omega - m.omega0) + 0.5 * m.kappa))
    return s


def linear_transmission(modes: ModeSet, omega):
    """Mode-parameter two-port transmission with symmetric end coupling.

    Each end carries kappa_c/2; only the magnitude is comparable with the
    ABCD network (the distributed line adds propagation phase).
    """
    omega = np.asarray(omega, dtype=float)
    t = np.zeros_like(omega, dtype=complex)
    for m in modes:
        t = t + (0.5 * m.kappa_c) / (1j * (omega - m.omega0) + 0.5 * m.kappa)
    return t
