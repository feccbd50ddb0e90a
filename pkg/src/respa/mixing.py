"""Four-wave product engine shared by the harmonic-balance and time-domain solvers.

Both solvers integrate/balance the same modal equations

    da_m/dt = (i*omega_m - kappa_m/2) a_m + i*G_m(a) + sqrt(kappa_c,m) b_in(t)

with the cubic mixing force G_m generated from the totally symmetric quartet
tensor ``W4`` of :mod:`respa.kerr`.  On a line set {f_l} with amplitudes
A[m, l], the force at line nu collects three product classes:

    (2,1):  A_p,a * A_q,b * conj(A_r,c)   with  f_a + f_b - f_c = nu
    (1,2):  conj(A_p,a * A_q,b) * A_r,c   with  f_c - f_a - f_b = nu
    (3,0):  A_p,a * A_q,b * A_r,c / 3     with  f_a + f_b + f_c = nu

each weighted by W4[m, p, q, r] and summed freely over mode triples, which
reproduces the conventional combinatorial weights automatically (1 for
self-phase |a|^2 a, 2 for cross-phase |a_p|^2 a_m, the (1,1,2) pattern for
pair conversion).  The (1,2) and (3,0) classes only activate when the line
set actually contains difference/sum frequencies (cross-harmonic combs);
ordinary single-band combs see pure (2,1) mixing.

The analytic Jacobian of G with respect to (A, conj(A)) produced here is used
both for Newton steps in the pump solve and, evaluated at the pump steady
state on an extended line set, as the small-signal (Bogoliubov) matrix, so
the two computations cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from respa.kerr import KerrMatrix

#: absolute frequency matching tolerance in rad/s; far below any physical
#: line spacing but far above double rounding on GHz-scale arithmetic
FREQ_MATCH_TOL = 1e-2


@dataclass(frozen=True)
class MixingTables:
    """Precomputed product index tables for one line set.

    Each class holds integer arrays (out, a, b, c) of equal length; rows are
    sorted lexicographically so the assembly order is deterministic.
    """

    freqs: np.ndarray
    class21: tuple
    class12: tuple
    class30: tuple


def _match_lines(values: np.ndarray, freqs: np.ndarray, tol: float) -> np.ndarray:
    """Index of the line each value falls on, -1 where no line matches."""
    order = np.argsort(freqs, kind="stable")
    sorted_f = freqs[order]
    pos = np.searchsorted(sorted_f, values)
    out = np.full(values.shape, -1, dtype=np.int64)
    for shift in (0, -1):
        p = np.clip(pos + shift, 0, len(freqs) - 1)
        ok = np.abs(sorted_f[p] - values) < tol
        out = np.where((out < 0) & ok, order[p], out)
    return out


def mixing_tables(freqs: np.ndarray, tol: float = FREQ_MATCH_TOL) -> MixingTables:
    """Enumerate all triple products of the line set that land on a line."""
    freqs = np.asarray(freqs, dtype=float)
    n = len(freqs)
    ia, ib, ic = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ia, ib, ic = ia.ravel(), ib.ravel(), ic.ravel()

    def build(target: np.ndarray) -> tuple:
        out = _match_lines(target, freqs, tol)
        keep = out >= 0
        rows = np.stack([out[keep], ia[keep], ib[keep], ic[keep]], axis=1)
        rows = rows[np.lexsort(rows.T[::-1])]
        return (rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])

    f_a, f_b, f_c = freqs[ia], freqs[ib], freqs[ic]
    return MixingTables(
        freqs=freqs,
        class21=build(f_a + f_b - f_c),
        class12=build(f_c - f_a - f_b),
        class30=build(f_a + f_b + f_c),
    )


class KerrMixer:
    """Evaluates the mixing force G and its analytic Jacobian on a line set."""

    def __init__(self, kerr: KerrMatrix):
        self.w4 = kerr.w4
        self.n_modes = kerr.n_modes

    def gamma(self, amps: np.ndarray, tables: MixingTables) -> np.ndarray:
        """Mixing force G[m, l] for amplitudes A[m, l] (complex, sqrt(J))."""
        m_count, n_lines = amps.shape
        g = np.zeros((m_count, n_lines), dtype=complex)

        def accumulate(rows, x1, x2, x3, weight=1.0):
            out, a, b, c = rows
            if len(out) == 0:
                return
            t = np.einsum(
                "mpqr,pk,qk,rk->mk", self.w4, x1[:, a], x2[:, b], x3[:, c]
            )
            for m in range(m_count):
                g[m] += weight * (
                    np.bincount(out, weights=t[m].real, minlength=n_lines)
                    + 1j * np.bincount(out, weights=t[m].imag, minlength=n_lines)
                )

        conj = np.conj(amps)
        accumulate(tables.class21, amps, amps, conj)
        accumulate(tables.class12, conj, conj, amps)
        accumulate(tables.class30, amps, amps, amps, weight=1.0 / 3.0)
        return g

    def jacobian(self, amps: np.ndarray, tables: MixingTables):
        """Analytic dG/dA and dG/dconj(A), each shaped (M*L, M*L).

        Row index (m*L + out), column index (p*L + l).
        """
        m_count, n_lines = amps.shape
        size = m_count * n_lines
        d_a = np.zeros((size, size), dtype=complex)
        d_ac = np.zeros((size, size), dtype=complex)
        conj = np.conj(amps)

        def accumulate(target, rows, slot, x_other1, o1, x_other2, o2, weight=1.0):
            # d/dA[p, line(slot)]: contract the two remaining factors over (q, r)
            out, a, b, c = rows
            if len(out) == 0:
                return
            idx = {"a": a, "b": b, "c": c}
            t = np.einsum(
                "mpqr,qk,rk->mpk", self.w4, x_other1[:, idx[o1]], x_other2[:, idx[o2]]
            )
            # flat[m, p, k] = (m*L + out[k]) * size + (p*L + line_of_slot[k])
            row = np.arange(m_count)[:, None, None] * n_lines + out[None, None, :]
            col = np.arange(m_count)[None, :, None] * n_lines + idx[slot][None, None, :]
            flat = (row * size + col).ravel()
            vals = np.broadcast_to(t, (m_count, m_count, len(out))).ravel()
            acc_r = np.bincount(flat, weights=vals.real * weight, minlength=size * size)
            acc_i = np.bincount(flat, weights=vals.imag * weight, minlength=size * size)
            target += (acc_r + 1j * acc_i).reshape(size, size)

        # (2,1): two bare slots (a, b), one conjugated slot (c)
        accumulate(d_a, tables.class21, "a", amps, "b", conj, "c")
        accumulate(d_a, tables.class21, "b", amps, "a", conj, "c")
        accumulate(d_ac, tables.class21, "c", amps, "a", amps, "b")
        # (1,2): conjugated slots (a, b), bare slot (c)
        accumulate(d_ac, tables.class12, "a", conj, "b", amps, "c")
        accumulate(d_ac, tables.class12, "b", conj, "a", amps, "c")
        accumulate(d_a, tables.class12, "c", conj, "a", conj, "b")
        # (3,0): three bare slots, weight 1/3 each
        accumulate(d_a, tables.class30, "a", amps, "b", amps, "c", weight=1.0 / 3.0)
        accumulate(d_a, tables.class30, "b", amps, "a", amps, "c", weight=1.0 / 3.0)
        accumulate(d_a, tables.class30, "c", amps, "a", amps, "b", weight=1.0 / 3.0)
        return d_a, d_ac
