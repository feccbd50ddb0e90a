"""Small-signal scattering around the pump steady state.

A weak probe at omega_s rides on top of the pump comb.  Linearizing the
harmonic-balance residual in the probe amplitude couples sideband lines
{omega_s + k*delta} to conjugate partners {sum_p - omega_s + k*delta}, where
sum_p = omega_p1 + omega_p2 is the pump pair sum (2*omega_p for a degenerate
pump).  The resulting Bogoliubov system is one dense linear solve per probe
frequency, assembled from the same analytic mixing Jacobian used by the pump
solver, so pump solve and small-signal solve can never disagree about the
model.

Gain in dB is defined against the unpumped response at the same frequency,
``20*log10(|g_s(pumped)| / |g_s(unpumped)|)``, which removes the static
insertion shape of the resonator; with no pump the profile is exactly 0 dB.

At the signal-idler degeneracy omega_s = sum_p/2 the probe line and its
conjugate partner coincide; the merged solve yields the two coherent
responses (g_s, g_c) whose phase-dependent sum produces phase-sensitive
amplification with period pi and, at high gain, a peak 6.02 dB above the
surrounding phase-insensitive plateau.  The same coincidence happens at
midpoints of any two comb lines, which is where the secondary
phase-sensitive spikes of a wide scan live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from respa.balance import PumpCombSolution, _linear_coeff
from respa.comb import PumpComb, merge_lines
from respa.geometry import ModeSet
from respa.kerr import KerrMatrix
from respa.mixing import KerrMixer, mixing_tables


class DegeneratePumpError(ValueError):
    """Phase-sensitive operation needs two distinct pump lines."""


class WidenWindowError(ValueError):
    """No half-power crossing inside the profile window."""


@dataclass(frozen=True)
class SidebandBasis:
    """Merged sideband slot set for one probe frequency."""

    slot_freqs: np.ndarray
    probe_slot: int
    idler_slot: int
    degenerate: bool
    pump_sum: float
    on_pump_lattice: bool


@dataclass(frozen=True)
class GainProfile:
    """Small-signal gain vs probe frequency at one operating point."""

    omega_s: np.ndarray
    g_signal: np.ndarray  # raw complex signal response
    g_idler: np.ndarray  # raw complex idler response
    baseline: np.ndarray  # |unpumped response| used for normalization
    gain_db: np.ndarray
    metadata: dict

    def __len__(self):
        return len(self.omega_s)


@dataclass(frozen=True)
class PhaseSweepResult:
    """Phase-sensitive gain at the signal-idler degenerate frequency."""

    theta: np.ndarray
    gain_db: np.ndarray
    g_max_db: float
    g_min_db: float
    period: float
    plateau_db: float
    metadata: dict


def pump_sum_frequency(comb: PumpComb) -> float:
    """sum_p = omega_p1 + omega_p2 (2*omega_p for a degenerate comb)."""
    lines = comb.pump_line_of
    if len(lines) == 1:
        return 2.0 * float(comb.frequencies[lines[0]])
    return float(comb.frequencies[lines[0]] + comb.frequencies[lines[1]])


def sideband_basis(
    comb: PumpComb,
    omega_s: float,
    order: int,
    collision_tol: float,
) -> SidebandBasis:
    """Sideband slots for a probe at omega_s, folded and merged.

    Slots colliding with pump comb lines mark the probe as sitting on the
    pump lattice (masked there, reported as NaN by the sweep).  A probe/idler
    coincidence sets the ``degenerate`` flag.
    """
    sum_p = pump_sum_frequency(comb)
    k = np.arange(-order, order + 1, dtype=float)
    direct = omega_s + k * comb.delta
    conj = (sum_p - omega_s) + k * comb.delta
    raw = np.abs(np.concatenate([direct, conj]))
    raw = raw[raw > 0.0]

    on_lattice = bool(np.min(np.abs(comb.frequencies - omega_s)) < collision_tol)

    merged, _ = merge_lines(raw, collision_tol)
    keep = np.array(
        [np.min(np.abs(comb.frequencies - f)) >= collision_tol for f in merged]
    )
    merged = merged[keep]

    def slot_of(freq: float) -> int:
        if len(merged) == 0:
            return -1
        j = int(np.argmin(np.abs(merged - freq)))
        return j if abs(merged[j] - freq) < collision_tol else -1

    probe = slot_of(omega_s)
    idler = slot_of(sum_p - omega_s)
    return SidebandBasis(
        slot_freqs=merged,
        probe_slot=probe,
        idler_slot=idler,
        degenerate=bool(probe >= 0 and probe == idler),
        pump_sum=sum_p,
        on_pump_lattice=on_lattice or probe < 0,
    )


class BogoliubovSolver:
    """Per-solution cache for sideband solves over many probe frequencies.

    For a probe that does not collide with the pump lattice, the mixing
    Jacobian blocks of the sideband system depend only on the pump
    amplitudes and on the integer structure of the comb, not on the probe
    frequency itself: products are matched through exact integer relations
    on the (probe, base, spacing) generators.  The dense coupling blocks are
    therefore assembled once and every probe frequency costs one small
    linear solve.  Folded (cross-harmonic) combs fall back to the generic
    per-point assembly.
    """

    def __init__(
        self,
        solution: PumpCombSolution,
        modes: ModeSet,
        kerr: KerrMatrix,
        order: int,
        collision_tol: float,
    ):
        self.solution = solution
        self.modes = modes
        self.kerr = kerr
        self.order = order
        self.collision_tol = collision_tol
        self.s_coupl = np.sqrt(modes.kappa_c)
        self.m_count = len(modes)
        self._fast = self._prepare_fast()

    def _pump_tuples(self):
        comb = self.solution.comb
        base, delta = comb.omega_base, comb.delta
        tuples = []
        for f in comb.frequencies:
            if delta == 0.0:
                if abs(f - base) > 1e-3:
                    return None
                tuples.append((0, 1, 0))
                continue
            k = round((f - base) / delta)
            if abs(base + k * delta - f) > 1e-3:
                return None  # folded or irregular comb line
            tuples.append((0, 1, int(k)))
        return tuples

    def _prepare_fast(self):
        pump_tuples = self._pump_tuples()
        if pump_tuples is None:
            return None
        comb = self.solution.comb
        order = self.order if comb.delta != 0.0 else 0
        ks = range(-order, order + 1)
        # direct slots (1, 0, k); conjugate slots (-1, 2, k - 1):
        # freq = alpha*omega_s + beta*base + k*delta, sum_p = 2*base - delta
        if comb.delta != 0.0:
            slot_tuples = [(1, 0, k) for k in ks] + [(-1, 2, k - 1) for k in ks]
        else:
            slot_tuples = [(1, 0, 0), (-1, 2, 0)]
        n_pump = len(pump_tuples)
        n_slots = len(slot_tuples)
        all_tuples = pump_tuples + slot_tuples
        index_of = {}
        for i, t in enumerate(all_tuples):
            if t in index_of:
                return None  # merged comb lines break the integer map
            index_of[t] = i

        is_slot = [i >= n_pump for i in range(len(all_tuples))]

        def enumerate_class(combine):
            rows = [[], [], [], []]
            n = len(all_tuples)
            for a in range(n):
                ta = all_tuples[a]
                for b in range(n):
                    tb = all_tuples[b]
                    for c in range(n):
                        tc = all_tuples[c]
                        n_sb = int(is_slot[a]) + int(is_slot[b]) + int(is_slot[c])
                        if n_sb != 1:
                            continue  # >=2 sideband factors vanish; 0 never lands on slots
                        t_out = combine(ta, tb, tc)
                        out = index_of.get(t_out)
                        if out is None or not is_slot[out]:
                            continue
                        rows[0].append(out)
                        rows[1].append(a)
                        rows[2].append(b)
                        rows[3].append(c)
            return tuple(np.array(r, dtype=np.int64) for r in rows)

        t21 = enumerate_class(
            lambda x, y, z: (x[0] + y[0] - z[0], x[1] + y[1] - z[1], x[2] + y[2] - z[2])
        )
        t12 = enumerate_class(
            lambda x, y, z: (z[0] - x[0] - y[0], z[1] - x[1] - y[1], z[2] - x[2] - y[2])
        )
        t30 = enumerate_class(
            lambda x, y, z: (x[0] + y[0] + z[0], x[1] + y[1] + z[1], x[2] + y[2] + z[2])
        )
        tables = MixingTables(
            freqs=np.zeros(len(all_tuples)), class21=t21, class12=t12, class30=t30
        )
        amps_ext = np.concatenate(
            [
                self.solution.amplitudes,
                np.zeros((self.m_count, n_slots), dtype=complex),
            ],
            axis=1,
        )
        mixer = KerrMixer(self.kerr)
        d_a, d_ac = mixer.jacobian(amps_ext, tables)
        n_ext = n_pump + n_slots
        idx = np.concatenate(
            [m * n_ext + n_pump + np.arange(n_slots) for m in range(self.m_count)]
        )
        ja = d_a[np.ix_(idx, idx)]
        jc = d_ac[np.ix_(idx, idx)]

        # slot frequency = slot_sign * omega_s + slot_rel
        if comb.delta != 0.0:
            slot_rel = np.array(
                [k * comb.delta for k in ks]
                + [pump_sum_frequency(comb) + (k - 1) * comb.delta for k in ks]
            )
            slot_sign = np.array([1.0] * (2 * order + 1) + [-1.0] * (2 * order + 1))
            probe_slot = order
            idler_slot = (2 * order + 1) + order
        else:
            slot_rel = np.array([0.0, pump_sum_frequency(comb)])
            slot_sign = np.array([1.0, -1.0])
            probe_slot, idler_slot = 0, 1
        return {
            "ja": ja,
            "jc": jc,
            "n_slots": n_slots,
            "slot_rel": slot_rel,
            "slot_sign": slot_sign,
            "probe_slot": probe_slot,
            "idler_slot": idler_slot,
        }

    def slot_frequencies(self, omega_s: float):
        fast = self._fast
        return fast["slot_sign"] * omega_s + fast["slot_rel"]

    def valid_fast_point(self, omega_s: float) -> bool:
        """Fast path applies off the pump lattice, away from degeneracies and folds."""
        if self._fast is None:
            return False
        comb = self.solution.comb
        tol = self.collision_tol
        if np.min(np.abs(comb.frequencies - omega_s)) < tol:
            return False
        freqs = self.slot_frequencies(omega_s)
        if np.any(freqs <= 0.0):
            return False
        diff = np.abs(freqs[:, None] - freqs[None, :])
        np.fill_diagonal(diff, np.inf)
        if np.min(diff) < tol:
            return False
        if np.min(np.abs(freqs[:, None] - comb.frequencies[None, :])) < tol:
            return False
        return True

    def respond(self, omega_s: float):
        """(g_s, g_i) raw responses at a generic probe frequency."""
        fast = self._fast
        n_slots = fast["n_slots"]
        freqs = self.slot_frequencies(omega_s)
        lin_sb = _linear_coeff(self.modes, freqs).ravel()
        size = self.m_count * n_slots
        top = np.hstack([np.diag(lin_sb) + 1j * fast["ja"], 1j * fast["jc"]])
        bottom = np.hstack(
            [
                -1j * np.conj(fast["jc"]),
                np.diag(np.conj(lin_sb)) - 1j * np.conj(fast["ja"]),
            ]
        )
        big = np.vstack([top, bottom])
        rhs = np.zeros(2 * size, dtype=complex)
        for m in range(self.m_count):
            row = m * n_slots + fast["probe_slot"]
            rhs[row] = -self.s_coupl[m]
            rhs[size + row] = -self.s_coupl[m]
        x = np.linalg.solve(big, rhs)
        u = x[:size].reshape(self.m_count, n_slots)
        g_s = 1.0 - complex(np.sum(self.s_coupl * u[:, fast["probe_slot"]]))
        g_i = -complex(np.sum(self.s_coupl * u[:, fast["idler_slot"]]))
        return g_s, g_i


def _sideband_responses(
    solution: PumpCombSolution,
    modes: ModeSet,
    kerr: KerrMatrix,
    basis: SidebandBasis,
):
    """Solve the Bogoliubov system for the direct and conjugate unit drives.

    Returns (u_direct, u_conj), each shaped (M, S): the sideband amplitudes
    produced by a unit input e^{i*omega_s*t} and by its conjugate channel.
    Raises numpy.linalg.LinAlgError exactly at a singular (bifurcation) point.
    """
    comb = solution.comb
    slots = basis.slot_freqs
    n_slots = len(slots)
    m_count = len(modes)
    n_pump = comb.n_lines

    s_coupl = np.sqrt(modes.kappa_c)
    lin_sb = _linear_coeff(modes, slots).ravel()

    amps = solution.amplitudes
    if not np.any(amps != 0.0):
        # unpumped: diagonal system, no anomalous coupling
        u_direct = np.zeros((m_count, n_slots), dtype=complex)
        lin_probe = lin_sb.reshape(m_count, n_slots)[:, basis.probe_slot]
        u_direct[:, basis.probe_slot] = -s_coupl / lin_probe
        return u_direct, np.zeros((m_count, n_slots), dtype=complex)

    ext_freqs = np.concatenate([comb.frequencies, slots])
    amps_ext = np.concatenate(
        [amps, np.zeros((m_count, n_slots), dtype=complex)], axis=1
    )
    tables = mixing_tables(ext_freqs)
    mixer = KerrMixer(kerr)
    d_a, d_ac = mixer.jacobian(amps_ext, tables)

    n_ext = n_pump + n_slots
    idx = np.concatenate(
        [m * n_ext + n_pump + np.arange(n_slots) for m in range(m_count)]
    )
    ja = d_a[np.ix_(idx, idx)]
    jc = d_ac[np.ix_(idx, idx)]

    size = m_count * n_slots
    top = np.hstack([np.diag(lin_sb) + 1j * ja, 1j * jc])
    bottom = np.hstack([-1j * np.conj(jc), np.diag(np.conj(lin_sb)) - 1j * np.conj(ja)])
    big = np.vstack([top, bottom])

    rhs = np.zeros((2 * size, 2), dtype=complex)
    for m in range(m_count):
        row = m * n_slots + basis.probe_slot
        rhs[row, 0] = -s_coupl[m]  # direct unit drive
        rhs[size + row, 1] = -s_coupl[m]  # conjugate unit drive

    x = np.linalg.solve(big, rhs)
    u_direct = x[:size, 0].reshape(m_count, n_slots)
    u_conj = x[:size, 1].reshape(m_count, n_slots)
    return u_direct, u_conj


def _unpumped_response(modes: ModeSet, omega: float) -> complex:
    """Linear single-port response along the solver's own zero-pump path."""
    lin = _linear_coeff(modes, np.array([omega]))[:, 0]
    s = np.sqrt(modes.kappa_c)
    return complex(1.0 + np.sum(s * s / lin))


def gain_profile(
    solution: PumpCombSolution,
    modes: ModeSet,
    kerr: KerrMatrix,
    omega_s_grid,
    order: int | None = None,
    collision_tol: float | None = None,
) -> GainProfile:
    """Signal and idler response over a probe frequency grid.

    Probe frequencies colliding with the pump lattice or a signal-idler
    degeneracy are reported as NaN (the phase operations handle those);
    singular points (exactly at a bifurcation) are NaN-flagged as well and
    the sweep continues.
    """
    if not solution.converged:
        raise ValueError("gain_profile needs a converged pump solution")
    comb = solution.comb
    if order is None:
        order = comb.n_max_order
    if collision_tol is None:
        collision_tol = 1e-6 * float(np.min(modes.kappa))

    omega_s_grid = np.asarray(omega_s_grid, dtype=float)
    g_sig = np.full(len(omega_s_grid), np.nan, dtype=complex)
    g_idl = np.full(len(omega_s_grid), np.nan, dtype=complex)
    base = np.empty(len(omega_s_grid))
    flags = []

    pumped = bool(np.any(solution.amplitudes != 0.0))
    cache = (
        BogoliubovSolver(solution, modes, kerr, order, collision_tol)
        if pumped
        else None
    )
    s = np.sqrt(modes.kappa_c)

    for i, w_s in enumerate(omega_s_grid):
        base[i] = abs(_unpumped_response(modes, w_s))
        if not pumped:
            g_sig[i] = _unpumped_response(modes, w_s)
            g_idl[i] = 0.0
            continue
        if cache.valid_fast_point(w_s):
            try:
                g_sig[i], g_idl[i] = cache.respond(w_s)
            except np.linalg.LinAlgError:
                flags.append((i, "singular"))
            continue
        basis = sideband_basis(comb, w_s, order, collision_tol)
        if basis.on_pump_lattice or basis.degenerate:
            flags.append((i, "degenerate" if basis.degenerate else "pump-lattice"))
            continue
        try:
            u1, u2 = _sideband_responses(solution, modes, kerr, basis)
        except np.linalg.LinAlgError:
            flags.append((i, "singular"))
            continue
        u = u1 + u2
        g_sig[i] = 1.0 - np.sum(s * u[:, basis.probe_slot])
        g_idl[i] = -np.sum(s * u[:, basis.idler_slot]) if basis.idler_slot >= 0 else 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        gain_db = 20.0 * np.log10(np.abs(g_sig) / base)

    return GainProfile(
        omega_s=omega_s_grid,
        g_signal=g_sig,
        g_idler=g_idl,
        baseline=base,
        gain_db=gain_db,
        metadata={
            "order": order,
            "pump_sum": pump_sum_frequency(comb),
            "flagged_points": flags,
        },
    )


def degenerate_responses(
    solution: PumpCombSolution,
    modes: ModeSet,
    kerr: KerrMatrix,
    omega_s: float,
    order: int | None = None,
    collision_tol: float | None = None,
):
    """Coherent pair (g_s, g_c) at a self-degenerate probe frequency.

    The output tone is g_s*e^{i theta} + g_c*e^{-i theta} for input phase
    theta.  Valid at the primary degeneracy sum_p/2 and at comb-pair
    midpoints (secondary degeneracies).
    """
    comb = solution.comb
    if order is None:
        order = comb.n_max_order
    if collision_tol is None:
        collision_tol = 1e-6 * float(np.min(modes.kappa))
    basis = sideband_basis(comb, omega_s, order, collision_tol)
    if not basis.degenerate:
        raise ValueError("probe frequency is not at a signal-idler degeneracy")
    u1, u2 = _sideband_responses(solution, modes, kerr, basis)
    s = np.sqrt(modes.kappa_c)
    g_s = 1.0 - complex(np.sum(s * u1[:, basis.probe_slot]))
    g_c = -complex(np.sum(s * u2[:, basis.probe_slot]))
    return g_s, g_c


def phase_sensitive_gain(
    solution: PumpCombSolution,
    modes: ModeSet,
    kerr: KerrMatrix,
    theta_grid,
    order: int | None = None,
    plateau_step: float | None = None,
) -> PhaseSweepResult:
    """Gain vs input phase at the signal-idler degenerate frequency sum_p/2.

    Requires non-degenerate pumping (two distinct pump lines, otherwise the
    degenerate point cannot be separated from the pump itself).  The plateau
    is the phase-insensitive gain averaged over probe offsets of 1..10 steps
    on both sides of the degeneracy.
    """
    comb = solution.comb
    if len(set(comb.pump_line_of)) < 2:
        raise DegeneratePumpError(
            "phase-sensitive operation requires two distinct pump lines"
        )
    theta_grid = np.asarray(theta_grid, dtype=float)
    w_d = 0.5 * pump_sum_frequency(comb)
    if plateau_step is None:
        # must stay deep inside the gain bandwidth (~kappa/gain) so the
        # plateau samples the flat top, not the skirts
        plateau_step = float(np.min(modes.kappa)) * 1e-5

    g_s, g_c = degenerate_responses(solution, modes, kerr, w_d, order=order)
    base = abs(_unpumped_response(modes, w_d))

    out = g_s * np.exp(1j * theta_grid) + g_c * np.exp(-1j * theta_grid)
    gain_db = 20.0 * np.log10(np.abs(out) / base)
    g_max_db = 20.0 * math.log10((abs(g_s) + abs(g_c)) / base)
    g_min_db = 20.0 * math.log10(abs(abs(g_s) - abs(g_c)) / base)

    offsets = np.concatenate(
        [w_d - plateau_step * np.arange(1, 11), w_d + plateau_step * np.arange(1, 11)]
    )
    plateau_profile = gain_profile(solution, modes, kerr, offsets, order=order)
    plateau_db = float(np.nanmean(plateau_profile.gain_db))

    # period: smallest positive shift that maps the curve onto itself
    period = _gain_period(theta_grid, gain_db)

    return PhaseSweepResult(
        theta=theta_grid,
        gain_db=gain_db,
        g_max_db=g_max_db,
        g_min_db=g_min_db,
        period=period,
        plateau_db=plateau_db,
        metadata={
            "omega_degenerate": w_d,
            "g_s": (g_s.real, g_s.imag),
            "g_c": (g_c.real, g_c.imag),
            "baseline": base,
        },
    )


def _gain_period(theta: np.ndarray, gain_db: np.ndarray) -> float:
    """Fundamental period of gain(theta) from the dominant Fourier component."""
    span = theta[-1] - theta[0]
    x = gain_db - np.mean(gain_db)
    best_k, best_a = 0, 0.0
    for k in range(1, 9):
        a = abs(np.sum(x * np.exp(-2j * np.pi * k * (theta - theta[0]) / span)))
        if a > best_a:
            best_k, best_a = k, a
    if best_k == 0:
        return math.inf
    return float(span / best_k)


def quadrature_decomposition(g_s: complex, g_i: complex):
    """Principal quadrature gains of the degenerate map b -> g_s b + g_i conj(b).

    Returns (amplified power gain, squeezed power gain, principal axis angle
    in radians).  The map acts on (Re b, Im b) as a real 2x2 matrix whose
    singular values are |g_s| +- |g_i|; the angle is the input quadrature
    mapped to the amplified output.
    """
    r = np.array(
        [
            [(g_s + g_i).real, -(g_s - g_i).imag],
            [(g_s + g_i).imag, (g_s - g_i).real],
        ]
    )
    u, sv, vt = np.linalg.svd(r)
    amplified = float(sv[0] ** 2)
    squeezed = float(sv[1] ** 2)
    axis = float(math.atan2(vt[0, 1], vt[0, 0]))
    return amplified, squeezed, axis


def gain_bandwidth(profile: GainProfile):
    """Peak amplitude gain, 3-dB full width, and their product.

    The peak must stand at least 3 dB above the profile minimum so that
    half-power crossings exist on both flanks; crossings are located by
    linear interpolation in power.
    """
    valid = np.isfinite(profile.gain_db)
    if not np.any(valid):
        raise WidenWindowError("profile contains no finite points")
    w = profile.omega_s[valid]
    gdb = profile.gain_db[valid]
    ipk = int(np.argmax(gdb))
    if gdb[ipk] - np.min(gdb) < 3.0:
        raise WidenWindowError("peak is less than 3 dB above the profile floor")
    if ipk == 0 or ipk == len(gdb) - 1:
        raise WidenWindowError("peak sits on the sweep edge; widen the window")

    power = 10.0 ** (gdb / 10.0)
    half = power[ipk] / 2.0

    def crossing(side):
        rng = range(ipk, 0, -1) if side < 0 else range(ipk, len(gdb) - 1)
        for i in rng:
            j = i - 1 if side < 0 else i + 1
            if (power[i] - half) * (power[j] - half) <= 0.0:
                frac = (half - power[i]) / (power[j] - power[i])
                return w[i] + frac * (w[j] - w[i])
        raise WidenWindowError("no half-power crossing inside the sweep window")

    w_lo = crossing(-1)
    w_hi = crossing(+1)
    g_amp = 10.0 ** (gdb[ipk] / 20.0)
    width = float(w_hi - w_lo)
    return g_amp, width, g_amp * width
