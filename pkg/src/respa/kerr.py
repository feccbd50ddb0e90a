"""Reduction of the distributed inductance nonlinearity to modal Kerr couplings.

The line inductance per unit length grows quadratically with current,
``L(I) = L0*(1 + (I/I_star)**2)``.  Expanding the stored inductive energy of
the standing-wave modes to quartic order and keeping slowly-rotating terms
yields an effective four-wave coupling between mode amplitudes.  With the
energy normalization ``|a_m|**2`` = stored joules, every coupling constant is

    W4[m, p, q, r] = -omega_ref * eta(p, q, r, m) / (2 * i_star**2 * L_norm)

where ``eta`` is the dimensionless overlap of four sinusoidal current
profiles on the uniform line, ``omega_ref`` the mean resonance frequency of
the mode set (identically the mode frequency for a single-mode set) and
``L_norm = l_per_len*length/2`` the inductance that converts stored energy to
mean-square current.  A single common frequency scale keeps the coupling
tensor totally symmetric, which is what makes the lossless conservation
identities of the solvers exact; it also makes the self/cross ratio exactly
(3/8)/(1/4) = 3/2 for every mode pair.  The familiar self- and cross-Kerr
matrix is the pairwise slice of this tensor; the same tensor also carries the
pair-conversion couplings between adjacent harmonics that enable
cross-harmonic pumping.  The full derivation, including the combinatorial
weights (1 for self-phase, 2 for cross-phase) shared with both steady-state
solvers, is written out in ``docs/kerr_reduction.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from respa.geometry import ModeSet, ResonatorGeometry


def overlap_eta(hp: int, hq: int, hr: int, hs: int) -> float:
    """Normalized spatial overlap of four sinusoidal current profiles.

    (1/length) * integral of sin(hp pi x/l) sin(hq pi x/l) sin(hr pi x/l)
    sin(hs pi x/l) dx, evaluated in closed form via product-to-sum identities.
    Diagonal value 3/8, pairwise cross value 1/4, adjacent-harmonic
    conversion value 1/8.
    """

    def matched(a: int, b: int) -> float:
        if a == b:
            return 2.0 if a == 0 else 1.0
        return 0.0

    d1 = abs(hp - hq)
    s1 = hp + hq
    d2 = abs(hr - hs)
    s2 = hr + hs
    return 0.125 * (matched(d1, d2) - matched(d1, s2) - matched(s1, d2) + matched(s1, s2))


@dataclass(frozen=True)
class KerrMatrix:
    """Modal Kerr couplings over a ModeSet.

    Attributes
    ----------
    k : ndarray, shape (M, M)
        Self- (diagonal) and cross- (off-diagonal) Kerr coefficients in
        rad/(s*J).  All entries are negative: kinetic inductance grows with
        current, so every resonance shifts down.  Symmetric by construction.
    w4 : ndarray, shape (M, M, M, M)
        Full quartet coupling tensor used by the solvers; ``k`` is its
        pairwise slice.  Totally symmetric in its four indices.
    normalization : str
        Declaration of the amplitude convention (``|a|^2`` in joules).
    """

    k: np.ndarray
    w4: np.ndarray
    harmonic_indices: tuple
    normalization: str = "energy-joules"

    @property
    def n_modes(self) -> int:
        return self.k.shape[0]

    def to_json(self) -> str:
        payload = {
            "units": "rad/(s*J)",
            "normalization": self.normalization,
            "harmonic_indices": list(self.harmonic_indices),
            "k": [[float(x) for x in row] for row in self.k],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def reduce_kerr(geom: ResonatorGeometry, modes: ModeSet) -> KerrMatrix:
    """Compute the modal Kerr tensor for the given geometry and mode set.

    ``k[m, n]`` is the frequency pull of mode m per joule stored in mode n
    divided by the cross-phase weight 2 (so the equations of motion carry
    ``k_mm|a_m|^2 a_m`` and ``2 k_mn |a_n|^2 a_m``).  For the uniform line the
    ratio ``k_nn / k_nm = (3/8)/(1/4) = 3/2`` holds exactly.
    """
    omega = modes.omega0
    harm = tuple(m.index for m in modes)
    m_count = len(modes)
    l_norm = geom.l_per_len * geom.length / 2.0
    omega_ref = float(np.mean(omega))
    scale = omega_ref / (2.0 * geom.i_star**2 * l_norm)

    w4 = np.zeros((m_count,) * 4)
    for a in range(m_count):
        for b in range(m_count):
            for c in range(m_count):
                for d in range(m_count):
                    eta = overlap_eta(harm[a], harm[b], harm[c], harm[d])
                    if eta != 0.0:
                        w4[a, b, c, d] = -eta * scale

    k = np.empty((m_count, m_count))
    for m in range(m_count):
        for n in range(m_count):
            # quartet (n, m, n | m): self value for n == m, cross-phase half-weight else
            k[m, n] = w4[m, n, m, n] if n != m else w4[m, m, m, m]

    return KerrMatrix(k=k, w4=w4, harmonic_indices=harm)
