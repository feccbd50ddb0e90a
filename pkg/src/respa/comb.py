"""Pump tones and the intermixing frequency comb they generate.

Two pumps at omega_p1, omega_p2 intermix through the cubic nonlinearity into
products at omega_p1 + n*(omega_p1 - omega_p2).  The comb spans n in
[-(N+1), +N] so that N product lines flank the pump pair on either side.
Products whose arithmetic frequency comes out negative are physical tones at
the absolute value (the conjugate image); they are folded to positive
frequency and kept as ordinary lines, which is what lets widely separated
(cross-harmonic) pumps reproduce the observed near-pump sideband families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CombError(ValueError):
    """Unsupported pump configuration."""


@dataclass(frozen=True)
class DriveTone:
    """One applied tone: angular frequency (rad/s), power at the device port (W), phase (rad)."""

    omega: float
    power_in: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.omega > 0.0:
            raise CombError("drive frequency must be positive")
        if self.power_in < 0.0:
            raise CombError("drive power must be >= 0")

    @property
    def amplitude(self) -> complex:
        """Input amplitude in sqrt(W): |b|^2 = power."""
        return math.sqrt(self.power_in) * complex(math.cos(self.phase), math.sin(self.phase))


@dataclass(frozen=True)
class PumpComb:
    """Frequency comb carrying the pump steady state.

    ``frequencies`` are the folded, merged, strictly positive line
    frequencies in ascending order; ``pump_line_of`` maps each input pump to
    its line index.
    """

    omega_base: float
    delta: float
    n_max_order: int
    frequencies: np.ndarray
    pump_line_of: tuple

    def __post_init__(self):
        if np.any(self.frequencies <= 0.0):
            raise CombError("all comb frequencies must be positive")
        if np.any(np.diff(self.frequencies) <= 0.0):
            raise CombError("comb frequencies must be strictly increasing")

    @property
    def n_lines(self) -> int:
        return len(self.frequencies)

    def line_index(self, omega: float, tol: float) -> int:
        hits = np.nonzero(np.abs(self.frequencies - omega) < tol)[0]
        if len(hits) != 1:
            raise KeyError(f"no unique comb line at {omega} rad/s")
        return int(hits[0])


def merge_lines(freqs: np.ndarray, tol: float):
    """Collapse lines closer than ``tol``; returns (unique sorted freqs, index map)."""
    order = np.argsort(freqs, kind="stable")
    merged = []
    index_map = np.empty(len(freqs), dtype=int)
    for i in order:
        f = freqs[i]
        if merged and abs(f - merged[-1]) < tol:
            index_map[i] = len(merged) - 1
        else:
            merged.append(f)
            index_map[i] = len(merged) - 1
    return np.array(merged), index_map


def build_comb(pumps, n_max_order: int, merge_tol: float | None = None) -> PumpComb:
    """Build the pump comb for one or two pump tones.

    A single tone gives the single-line degenerate comb.  Two tones at
    distinct frequencies give spacing |omega_p1 - omega_p2| with the pumps on
    lines n = 0 and n = -1 and ``n_max_order`` product lines beyond each.
    Two tones at the same frequency (within ``merge_tol``) merge coherently
    into one line.  More than two pumps are unsupported.
    """
    pumps = list(pumps)
    if not 1 <= len(pumps) <= 2:
        raise CombError("only 1 or 2 pump tones are supported")
    if n_max_order < 0:
        raise CombError("n_max_order must be >= 0")

    if merge_tol is None:
        merge_tol = 1e-9 * max(p.omega for p in pumps)

    if len(pumps) == 2 and abs(pumps[0].omega - pumps[1].omega) < merge_tol:
        base = 0.5 * (pumps[0].omega + pumps[1].omega)
        return PumpComb(
            omega_base=base,
            delta=0.0,
            n_max_order=0,
            frequencies=np.array([base]),
            pump_line_of=(0, 0),
        )

    if len(pumps) == 1:
        base = pumps[0].omega
        return PumpComb(
            omega_base=base,
            delta=0.0,
            n_max_order=0,
            frequencies=np.array([base]),
            pump_line_of=(0,),
        )

    base = pumps[0].omega
    delta = pumps[0].omega - pumps[1].omega
    orders = np.arange(-(n_max_order + 1), n_max_order + 1)
    raw = base + orders * delta
    folded = np.abs(raw)
    folded = folded[folded > 0.0]
    freqs, _ = merge_lines(folded, merge_tol)

    pump_lines = []
    for p in pumps:
        idx = int(np.argmin(np.abs(freqs - p.omega)))
        if abs(freqs[idx] - p.omega) > merge_tol:
            raise CombError("pump tone missing from its own comb")
        pump_lines.append(idx)

    return PumpComb(
        omega_base=base,
        delta=delta,
        n_max_order=n_max_order,
        frequencies=freqs,
        pump_line_of=tuple(pump_lines),
    )


def drive_vector(comb: PumpComb, pumps) -> np.ndarray:
    """Input amplitude per comb line in sqrt(W); coincident pumps add coherently."""
    pumps = list(pumps)
    b = np.zeros(comb.n_lines, dtype=complex)
    for p, line in zip(pumps, comb.pump_line_of):
        b[line] += p.amplitude
    return b
