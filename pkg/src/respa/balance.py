"""Steady state of the pumped resonator on the intermixing comb.

For every mode m and comb line n the harmonic-balance residual

    R[m,n] = [i*(omega_m - f_n) - kappa_m/2] * A[m,n]
             + i * G[m,n](A) + sqrt(kappa_c,m) * B[n]

must vanish, where B is the input drive amplitude (nonzero on pump lines,
|B|^2 in watts) and G the cubic mixing force of :mod:`respa.mixing`.  The
system is solved by damped Newton iteration in the doubled real
representation, reaching the requested operating power through a geometric
continuation ramp with warm starts.  The minimum singular value of the real
Jacobian, normalized to its zero-power value, is recorded as the bifurcation
witness: it collapses at a fold of the Duffing response.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from respa.comb import PumpComb, drive_vector
from respa.geometry import ModeSet
from respa.kerr import KerrMatrix
from respa.mixing import KerrMixer, MixingTables, mixing_tables

DEFAULT_TOL = 1e-10
DEFAULT_CONTINUATION_STEPS = 24
DEFAULT_BIFURCATION_THRESHOLD = 1e-3
MAX_NEWTON_ITERATIONS = 60


@dataclass(frozen=True)
class PumpCombSolution:
    """Converged (or diagnosed) pump steady state."""

    comb: PumpComb
    amplitudes: np.ndarray  # (M, L) complex, |A|^2 in joules
    b_drive: np.ndarray  # (L,) complex, |B|^2 in watts
    residual_norm: float
    jacobian_min_singular_value: float  # sigma_min normalized to zero-power value
    converged: bool
    bifurcated: bool
    diagnostics: dict

    def to_json(self) -> str:
        payload = {
            "frequencies_rad_s": [float(f) for f in self.comb.frequencies],
            "amplitudes": [
                [[float(z.real), float(z.imag)] for z in row] for row in self.amplitudes
            ],
            "drive": [[float(z.real), float(z.imag)] for z in self.b_drive],
            "residual_norm": self.residual_norm,
            "jacobian_min_singular_value": self.jacobian_min_singular_value,
            "converged": self.converged,
            "bifurcated": self.bifurcated,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _linear_coeff(modes: ModeSet, freqs: np.ndarray) -> np.ndarray:
    """lin[m, n] = i*(omega_m - f_n) - kappa_m/2."""
    omega = modes.omega0[:, None]
    kappa = modes.kappa[:, None]
    return 1j * (omega - freqs[None, :]) - 0.5 * kappa


def hb_residual(
    modes: ModeSet,
    mixer: KerrMixer,
    tables: MixingTables,
    amps: np.ndarray,
    b_drive: np.ndarray,
) -> np.ndarray:
    lin = _linear_coeff(modes, tables.freqs)
    s = np.sqrt(modes.kappa_c)[:, None]
    return lin * amps + 1j * mixer.gamma(amps, tables) + s * b_drive[None, :]


def _real_jacobian(lin_flat, d_a, d_ac):
    """Real 2NxN Jacobian blocks from complex dR/dA and dR/dA*."""
    f_a = np.diag(lin_flat) + 1j * d_a
    f_c = 1j * d_ac
    top = np.hstack([(f_a + f_c).real, -(f_a - f_c).imag])
    bot = np.hstack([(f_a + f_c).imag, (f_a - f_c).real])
    return np.vstack([top, bot])


def _newton(modes, mixer, tables, amps0, b_drive, tol, max_iter=MAX_NEWTON_ITERATIONS):
    """Damped Newton iteration; returns (amps, residual_norm, converged, n_iter)."""
    m_count, n_lines = amps0.shape
    lin = _linear_coeff(modes, tables.freqs)
    scale = float(np.max(np.abs(np.sqrt(modes.kappa_c)[:, None] * b_drive[None, :])))
    if scale == 0.0:
        scale = float(np.max(np.abs(lin)))

    amps = amps0.copy()
    res = hb_residual(modes, mixer, tables, amps, b_drive)
    norm = float(np.max(np.abs(res))) / scale
    for iteration in range(max_iter):
        if norm < tol:
            return amps, norm, True, iteration
        d_a, d_ac = mixer.jacobian(amps, tables)
        jac = _real_jacobian(lin.ravel(), d_a, d_ac)
        rhs = np.concatenate([res.ravel().real, res.ravel().imag])
        try:
            step = np.linalg.solve(jac, -rhs)
        except np.linalg.LinAlgError:
            return amps, norm, False, iteration
        step_c = (step[: m_count * n_lines] + 1j * step[m_count * n_lines :]).reshape(
            m_count, n_lines
        )
        # backtracking line search on the residual norm
        damping = 1.0
        for _ in range(12):
            trial = amps + damping * step_c
            res_t = hb_residual(modes, mixer, tables, trial, b_drive)
            norm_t = float(np.max(np.abs(res_t))) / scale
            if norm_t < norm:
                amps, res, norm = trial, res_t, norm_t
                break
            damping *= 0.5
        else:
            return amps, norm, norm < tol, iteration
    return amps, norm, norm < tol, max_iter


def solve_pump_steady_state(
    modes: ModeSet,
    kerr: KerrMatrix,
    comb: PumpComb,
    pumps,
    tol: float = DEFAULT_TOL,
    continuation_steps: int = DEFAULT_CONTINUATION_STEPS,
    bifurcation_threshold: float = DEFAULT_BIFURCATION_THRESHOLD,
) -> PumpCombSolution:
    """Solve the pump steady state, ramping power geometrically from the linear regime.

    Newton divergence is reported through ``converged=False`` plus
    diagnostics, never as an exception.  ``bifurcated`` is set when the
    normalized minimum singular value of the Jacobian at the solution falls
    below ``bifurcation_threshold``.
    """
    mixer = KerrMixer(kerr)
    tables = mixing_tables(comb.frequencies)
    b_full = drive_vector(comb, pumps)
    lin = _linear_coeff(modes, comb.frequencies)
    s = np.sqrt(modes.kappa_c)[:, None]

    total_power = float(sum(p.power_in for p in pumps))
    if total_power == 0.0:
        sigma = 1.0
        return PumpCombSolution(
            comb=comb,
            amplitudes=np.zeros_like(lin),
            b_drive=b_full,
            residual_norm=0.0,
            jacobian_min_singular_value=sigma,
            converged=True,
            bifurcated=False,
            diagnostics={"continuation_steps_used": 0, "newton_iterations": 0},
        )

    steps = max(int(continuation_steps), 20)
    factors = np.geomspace(1e-6, 1.0, steps)
    amps = -(s * (b_full[None, :] * np.sqrt(factors[0]))) / lin  # linear warm start

    n_newton_total = 0
    fac_prev = factors[0]
    queue = list(factors)
    depth_budget = 3 * steps
    while queue:
        fac = queue[0]
        b_step = b_full * np.sqrt(fac)
        amps_try = amps * np.sqrt(fac / fac_prev)
        amps_new, norm, ok, iters = _newton(modes, mixer, tables, amps_try, b_step, tol)
        n_newton_total += iters
        if ok:
            amps, fac_prev = amps_new, fac
            queue.pop(0)
            continue
        # refine the ramp once per failure, give up when too dense
        depth_budget -= 1
        if depth_budget <= 0 or (fac / fac_prev) < 1.0 + 1e-6:
            d_a, d_ac = mixer.jacobian(amps_new, tables)
            jac = _real_jacobian(lin.ravel(), d_a, d_ac)
            sigma_min = float(np.linalg.svd(jac, compute_uv=False)[-1])
            sigma0 = float(np.min(np.abs(lin)))
            return PumpCombSolution(
                comb=comb,
                amplitudes=amps_new,
                b_drive=b_step,
                residual_norm=norm,
                jacobian_min_singular_value=sigma_min / sigma0,
                converged=False,
                bifurcated=True,
                diagnostics={
                    "failed_at_power_fraction": float(fac),
                    "newton_iterations": n_newton_total,
                    "residual_norm": norm,
                },
            )
        queue.insert(0, float(np.sqrt(fac_prev * fac)))

    d_a, d_ac = mixer.jacobian(amps, tables)
    jac = _real_jacobian(lin.ravel(), d_a, d_ac)
    sigma_min = float(np.linalg.svd(jac, compute_uv=False)[-1])
    sigma0 = float(np.min(np.abs(lin)))
    sigma_ratio = sigma_min / sigma0

    res = hb_residual(modes, mixer, tables, amps, b_full)
    scale = float(np.max(np.abs(s * b_full[None, :])))
    norm = float(np.max(np.abs(res))) / scale

    return PumpCombSolution(
        comb=comb,
        amplitudes=amps,
        b_drive=b_full,
        residual_norm=norm,
        jacobian_min_singular_value=sigma_ratio,
        converged=norm < tol,
        bifurcated=bool(sigma_ratio < bifurcation_threshold),
        diagnostics={
            "continuation_steps_used": steps,
            "newton_iterations": n_newton_total,
        },
    )


def comb_output_spectrum(solution: PumpCombSolution, modes: ModeSet):
    """Output (frequency rad/s, power W) per comb line via the input-output relation."""
    s = np.sqrt(modes.kappa_c)
    c_out = solution.b_drive - s @ solution.amplitudes
    return [
        (float(f), float(abs(c) ** 2))
        for f, c in zip(solution.comb.frequencies, c_out)
    ]
