"""Declarative experiment execution: configs, runners, tuning, sensitivity.

Experiments are described by flat INI files with fixed per-key units (GHz,
dBm, degrees; SI elsewhere) and executed into an output directory as CSV
artifacts plus a machine-readable ``summary.json``.  All iteration orders are
fixed and no output contains wall-clock data, so re-running a scenario
reproduces every artifact byte for byte (the ``version`` field of the summary
is the one sanctioned difference channel across releases).
"""

from __future__ import annotations

import configparser
import io
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

import respa
from respa.balance import solve_pump_steady_state, comb_output_spectrum
from respa.comb import DriveTone, build_comb
from respa.geometry import (
    ModeSet,
    ResonatorGeometry,
    find_modes,
    linear_response,
)
from respa.kerr import reduce_kerr
from respa.scattering import (
    WidenWindowError,
    degenerate_responses,
    gain_bandwidth,
    gain_profile,
    phase_sensitive_gain,
    pump_sum_frequency,
)
from respa.timedomain import TdSettings, extract_tone, integrate

TWO_PI = 2.0 * math.pi
GHZ = TWO_PI * 1e9

EXPERIMENT_KINDS = (
    "resonances",
    "pump-solve",
    "gain-sweep",
    "wide-scan",
    "phase-sweep",
    "sensitivity",
    "cross-harmonic",
    "oracle-check",
    "tune",
)


class ConfigError(ValueError):
    """Malformed or incomplete experiment configuration."""


class OperatingPointError(RuntimeError):
    """Pump placement incompatible with the requested experiment."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0 if watts > 0.0 else -math.inf


@dataclass(frozen=True)
class PumpSpec:
    """One pump tone in config units (GHz, dBm, degrees)."""

    freq_ghz: float
    power_dbm: float
    phase_deg: float = 0.0

    def to_drive(self) -> DriveTone:
        return DriveTone(
            omega=self.freq_ghz * GHZ,
            power_in=dbm_to_watts(self.power_dbm),
            phase=math.radians(self.phase_deg),
        )


@dataclass(frozen=True)
class SweepSpec:
    start_ghz: float = 0.0
    stop_ghz: float = 0.0
    points: int = 2001
    theta_points: int = 721


@dataclass(frozen=True)
class SolverSpec:
    comb_order: int = 3
    sideband_order: int = 3
    tol: float = 1e-10
    continuation_steps: int = 24
    bifurcation_threshold: float = 1e-3


@dataclass(frozen=True)
class TuneSpec:
    target_gain_db: float = 20.0
    power_start_dbm: float = -62.0
    power_step_db: float = 0.5
    power_max_dbm: float = -48.0
    scan_halfwidth_linewidths: float = 2.0
    gain_tolerance_db: float = 0.1


@dataclass(frozen=True)
class OracleSpec:
    probe_points: int = 11
    probe_power_ratio: float = 1e-8
    transient_linewidths: float = 600.0
    ramp_steps: int = 30
    gain_tolerance_db: float = 0.1


@dataclass(frozen=True)
class SensitivitySpec:
    match_gain_db: float = 17.0
    match_tolerance_db: float = 0.5
    freq_step_fraction: float = 0.005  # of a linewidth
    power_step_db: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    geometry: ResonatorGeometry
    n_modes: int
    operating_mode: int
    pumps: tuple
    sweep: SweepSpec = SweepSpec()
    solver: SolverSpec = SolverSpec()
    tune: TuneSpec = TuneSpec()
    oracle: OracleSpec = OracleSpec()
    sensitivity: SensitivitySpec = SensitivitySpec()

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not 1 <= len(self.pumps) <= 2 and self.kind != "resonances":
            raise ConfigError("1 or 2 pump tones required")

    def drives(self):
        return [p.to_drive() for p in self.pumps]


_GEOMETRY_KEYS = {
    "length_m": "length",
    "l_per_len_h_per_m": "l_per_len",
    "c_per_len_f_per_m": "c_per_len",
    "c_couple_in_f": "c_couple_in",
    "c_couple_out_f": "c_couple_out",
    "q_internal": "q_internal",
    "z_env_ohm": "z_env",
    "i_star_a": "i_star",
}


def parse_config(text_or_path) -> ExperimentConfig:
    """Parse an experiment INI file (path or literal text)."""
    parser = configparser.ConfigParser()
    if isinstance(text_or_path, str) and "\n" not in text_or_path and os.path.exists(
        text_or_path
    ):
        with open(text_or_path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    else:
        parser.read_string(text_or_path)

    def need(section):
        if not parser.has_section(section):
            raise ConfigError(f"missing [{section}] section")
        return parser[section]

    exp = need("experiment")
    kind = exp.get("kind", "").strip()
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")

    geo_sec = need("geometry")
    try:
        geom = ResonatorGeometry(
            **{arg: float(geo_sec[key]) for key, arg in _GEOMETRY_KEYS.items()}
        )
    except KeyError as exc:
        raise ConfigError(f"missing geometry key {exc}") from exc

    modes_sec = need("modes")
    n_modes = int(modes_sec.get("n_modes", "3"))
    operating_mode = int(modes_sec.get("operating_mode", str(n_modes)))

    pumps = []
    if parser.has_section("pumps"):
        psec = parser["pumps"]
        for i in (1, 2):
            if f"pump{i}_freq_ghz" in psec:
                pumps.append(
                    PumpSpec(
                        freq_ghz=float(psec[f"pump{i}_freq_ghz"]),
                        power_dbm=float(psec[f"pump{i}_power_dbm"]),
                        phase_deg=float(psec.get(f"pump{i}_phase_deg", "0.0")),
                    )
                )
    if kind != "resonances" and not pumps:
        raise ConfigError(f"[pumps] section required for kind {kind!r}")

    def load(speccls, section, casts):
        if not parser.has_section(section):
            return speccls()
        sec = parser[section]
        kwargs = {}
        for name, cast in casts.items():
            if name in sec:
                kwargs[name] = cast(sec[name])
        return speccls(**kwargs)

    sweep = load(
        SweepSpec,
        "sweep",
        {"start_ghz": float, "stop_ghz": float, "points": int, "theta_points": int},
    )
    solver = load(
        SolverSpec,
        "solver",
        {
            "comb_order": int,
            "sideband_order": int,
            "tol": float,
            "continuation_steps": int,
            "bifurcation_threshold": float,
        },
    )
    tune = load(
        TuneSpec,
        "tune",
        {
            "target_gain_db": float,
            "power_start_dbm": float,
            "power_step_db": float,
            "power_max_dbm": float,
            "scan_halfwidth_linewidths": float,
            "gain_tolerance_db": float,
        },
    )
    oracle = load(
        OracleSpec,
        "oracle",
        {
            "probe_points": int,
            "probe_power_ratio": float,
            "transient_linewidths": float,
            "ramp_steps": int,
            "gain_tolerance_db": float,
        },
    )
    sens = load(
        SensitivitySpec,
        "sensitivity",
        {
            "match_gain_db": float,
            "match_tolerance_db": float,
            "freq_step_fraction": float,
            "power_step_db": float,
        },
    )

    kind_needs_sweep = kind in ("gain-sweep", "wide-scan", "resonances", "cross-harmonic")
    if kind_needs_sweep and not (sweep.stop_ghz > sweep.start_ghz > 0.0):
        raise ConfigError(f"[sweep] start/stop required for kind {kind!r}")

    return ExperimentConfig(
        kind=kind,
        geometry=geom,
        n_modes=n_modes,
        operating_mode=operating_mode,
        pumps=tuple(pumps),
        sweep=sweep,
        solver=solver,
        tune=tune,
        oracle=oracle,
        sensitivity=sens,
    )


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical INI text; parse(serialize(parse(x))) == parse(x)."""
    out = io.StringIO()
    out.write("[experiment]\n")
    out.write(f"kind = {config.kind}\n\n")

    out.write("[geometry]\n")
    for key, arg in _GEOMETRY_KEYS.items():
        out.write(f"{key} = {getattr(config.geometry, arg)!r}\n")
    out.write("\n[modes]\n")
    out.write(f"n_modes = {config.n_modes}\n")
    out.write(f"operating_mode = {config.operating_mode}\n")

    if config.pumps:
        out.write("\n[pumps]\n")
        for i, p in enumerate(config.pumps, start=1):
            out.write(f"pump{i}_freq_ghz = {p.freq_ghz!r}\n")
            out.write(f"pump{i}_power_dbm = {p.power_dbm!r}\n")
            out.write(f"pump{i}_phase_deg = {p.phase_deg!r}\n")

    out.write("\n[sweep]\n")
    for name in ("start_ghz", "stop_ghz", "points", "theta_points"):
        out.write(f"{name} = {getattr(config.sweep, name)!r}\n")
    out.write("\n[solver]\n")
    for name in (
        "comb_order",
        "sideband_order",
        "tol",
        "continuation_steps",
        "bifurcation_threshold",
    ):
        out.write(f"{name} = {getattr(config.solver, name)!r}\n")
    out.write("\n[tune]\n")
    for name in (
        "target_gain_db",
        "power_start_dbm",
        "power_step_db",
        "power_max_dbm",
        "scan_halfwidth_linewidths",
        "gain_tolerance_db",
    ):
        out.write(f"{name} = {getattr(config.tune, name)!r}\n")
    out.write("\n[oracle]\n")
    for name in (
        "probe_points",
        "probe_power_ratio",
        "transient_linewidths",
        "ramp_steps",
        "gain_tolerance_db",
    ):
        out.write(f"{name} = {getattr(config.oracle, name)!r}\n")
    out.write("\n[sensitivity]\n")
    for name in (
        "match_gain_db",
        "match_tolerance_db",
        "freq_step_fraction",
        "power_step_db",
    ):
        out.write(f"{name} = {getattr(config.sensitivity, name)!r}\n")
    return out.getvalue()


# --- pipeline ----------------------------------------------------------------

@dataclass(frozen=True)
class Pipeline:
    config: ExperimentConfig
    modes: ModeSet
    kerr: object
    operating: object  # Mode

    @property
    def kappa(self) -> float:
        return self.operating.kappa


def build_pipeline(config: ExperimentConfig) -> Pipeline:
    modes = find_modes(config.geometry, config.n_modes)
    kerr = reduce_kerr(config.geometry, modes)
    operating = modes.mode_with_index(config.operating_mode)
    return Pipeline(config=config, modes=modes, kerr=kerr, operating=operating)


def solve_at(pipe: Pipeline, drives, comb_order=None):
    solver = pipe.config.solver
    comb = build_comb(
        drives, comb_order if comb_order is not None else solver.comb_order
    )
    sol = solve_pump_steady_state(
        pipe.modes,
        pipe.kerr,
        comb,
        drives,
        tol=solver.tol,
        continuation_steps=solver.continuation_steps,
        bifurcation_threshold=solver.bifurcation_threshold,
    )
    return sol


def peak_gain_search(pipe: Pipeline, sol, refine_stages: int = 2):
    """Peak small-signal gain near the pump-pair half-sum frequency.

    Returns (peak_gain_db, peak_omega) from a coarse grid around sum_p/2
    refined around the running maximum; NaN bins (pump lattice collisions,
    degeneracies) are skipped.
    """
    kap = pipe.kappa
    center = 0.5 * pump_sum_frequency(sol.comb)
    lo, hi = center - 0.45 * kap, center + 0.45 * kap
    best_g, best_w = -math.inf, center
    for stage in range(refine_stages + 1):
        grid = np.linspace(lo, hi, 17)
        prof = gain_profile(
            sol, pipe.modes, pipe.kerr, grid, order=pipe.config.solver.sideband_order
        )
        finite = np.isfinite(prof.gain_db)
        if np.any(finite):
            i = int(np.nanargmax(np.where(finite, prof.gain_db, -math.inf)))
            if prof.gain_db[i] > best_g:
                best_g, best_w = float(prof.gain_db[i]), float(grid[i])
        width = (hi - lo) / 8.0
        lo, hi = best_w - width, best_w + width
    return best_g, best_w


# --- runners -----------------------------------------------------------------

def _sweep_grid(config: ExperimentConfig) -> np.ndarray:
    return np.linspace(
        config.sweep.start_ghz * GHZ, config.sweep.stop_ghz * GHZ, config.sweep.points
    )


def _format_row(values) -> str:
    return ",".join(f"{v:.12e}" for v in values)


def write_gain_csv(path: str, profile) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("freq_ghz,gain_db,g_s_re,g_s_im,g_i_re,g_i_im\n")
        for i in range(len(profile)):
            fh.write(
                _format_row(
                    [
                        profile.omega_s[i] / GHZ,
                        profile.gain_db[i],
                        profile.g_signal[i].real,
                        profile.g_signal[i].imag,
                        profile.g_idler[i].real,
                        profile.g_idler[i].imag,
                    ]
                )
                + "\n"
            )


def write_comb_csv(path: str, solution, modes) -> None:
    spectrum = comb_output_spectrum(solution, modes)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("freq_ghz,input_power_w,output_power_w\n")
        for (f, p_out), b in zip(spectrum, solution.b_drive):
            fh.write(_format_row([f / GHZ, abs(b) ** 2, p_out]) + "\n")


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary_base(config: ExperimentConfig) -> dict:
    return {"version": respa.__version__, "kind": config.kind}


def _profile_summary(pipe: Pipeline, sol, profile) -> dict:
    out = {
        "converged": bool(sol.converged),
        "bifurcated": bool(sol.bifurcated),
        "residual_norm": float(sol.residual_norm),
        "jacobian_min_singular_value": float(sol.jacobian_min_singular_value),
    }
    finite = np.isfinite(profile.gain_db)
    if not np.any(finite):
        out["flags"] = {"empty_profile": True}
        return out
    ipk = int(np.nanargmax(np.where(finite, profile.gain_db, -math.inf)))
    out["peak_gain_db"] = float(profile.gain_db[ipk])
    out["peak_freq_ghz"] = float(profile.omega_s[ipk] / GHZ)
    flags = {}
    try:
        g_amp, width, product = gain_bandwidth(profile)
        out["bandwidth_3db_mhz"] = width / TWO_PI / 1e6
        out["gain_bandwidth_product_mhz"] = product / TWO_PI / 1e6
        out["gain_bandwidth_over_kappa"] = product / pipe.kappa
        pump_offsets = [
            abs(d.omega - profile.omega_s[ipk]) / width for d in pipe.config.drives()
        ]
        out["pump_offsets_bandwidths"] = [float(x) for x in pump_offsets]
    except WidenWindowError as exc:
        flags["no_bandwidth"] = str(exc)
    out["flags"] = flags
    return out


def run_resonances(config: ExperimentConfig, outdir: str) -> dict:
    pipe = build_pipeline(config)
    with open(os.path.join(outdir, "modes.json"), "w", encoding="utf-8") as fh:
        fh.write(pipe.modes.to_json())
        fh.write("\n")
    grid = _sweep_grid(config)
    s = linear_response(pipe.modes, grid)
    with open(
        os.path.join(outdir, "linear_response.csv"), "w", encoding="utf-8"
    ) as fh:
        fh.write("freq_ghz,s_re,s_im,s_abs\n")
        for w, z in zip(grid, s):
            fh.write(_format_row([w / GHZ, z.real, z.imag, abs(z)]) + "\n")
    summary = _summary_base(config)
    summary["modes"] = [
        {
            "index": m.index,
            "freq_ghz": m.omega0 / GHZ,
            "kappa_c_mhz": m.kappa_c / TWO_PI / 1e6,
            "kappa_i_mhz": m.kappa_i / TWO_PI / 1e6,
        }
        for m in pipe.modes
    ]
    return summary


def run_pump_solve(config: ExperimentConfig, outdir: str) -> dict:
    pipe = build_pipeline(config)
    sol = solve_at(pipe, config.drives())
    with open(os.path.join(outdir, "solution.json"), "w", encoding="utf-8") as fh:
        fh.write(sol.to_json())
        fh.write("\n")
    write_comb_csv(os.path.join(outdir, "comb_spectrum.csv"), sol, pipe.modes)
    summary = _summary_base(config)
    summary.update(
        {
            "converged": bool(sol.converged),
            "bifurcated": bool(sol.bifurcated),
            "residual_norm": float(sol.residual_norm),
            "jacobian_min_singular_value": float(sol.jacobian_min_singular_value),
            "comb_lines_ghz": [float(f / GHZ) for f in sol.comb.frequencies],
        }
    )
    if not sol.converged:
        summary["failure_cause"] = sol.diagnostics
    return summary


def _run_profile_kind(config: ExperimentConfig, outdir: str, wide: bool) -> dict:
    pipe = build_pipeline(config)
    sol = solve_at(pipe, config.drives())
    summary = _summary_base(config)
    if not sol.converged:
        summary.update(
            {
                "converged": False,
                "bifurcated": bool(sol.bifurcated),
                "failure_cause": sol.diagnostics,
            }
        )
        write_gain_csv(
            os.path.join(outdir, "gain_sweep.csv"),
            gain_profile_empty(_sweep_grid(config)),
        )
        return summary

    grid = _sweep_grid(config)
    profile = gain_profile(
        sol, pipe.modes, pipe.kerr, grid, order=config.solver.sideband_order
    )
    write_gain_csv(os.path.join(outdir, "gain_sweep.csv"), profile)
    write_comb_csv(os.path.join(outdir, "comb_spectrum.csv"), sol, pipe.modes)
    summary.update(_profile_summary(pipe, sol, profile))

    if wide:
        spikes = secondary_degeneracy_spikes(pipe, sol, grid)
        write_json(os.path.join(outdir, "spikes.json"), {"spikes": spikes})
        summary["phase_sensitive_spikes"] = spikes
        spectrum = comb_output_spectrum(sol, pipe.modes)
        powers = np.array([p for _, p in spectrum])
        pump_power = max(
            powers[list(sol.comb.pump_line_of)[i]] for i in range(len(sol.comb.pump_line_of))
        )
        within = [
            float(f / GHZ)
            for (f, p), is_pump in zip(
                spectrum,
                [i in sol.comb.pump_line_of for i in range(sol.comb.n_lines)],
            )
            if (not is_pump) and p > 1e-3 * pump_power
        ]
        summary["intermix_lines_within_30db_ghz"] = within
    return summary


def gain_profile_empty(grid):
    from respa.scattering import GainProfile

    n = len(grid)
    return GainProfile(
        omega_s=grid,
        g_signal=np.full(n, np.nan, dtype=complex),
        g_idler=np.full(n, np.nan, dtype=complex),
        baseline=np.full(n, np.nan),
        gain_db=np.full(n, np.nan),
        metadata={},
    )


def secondary_degeneracy_spikes(pipe: Pipeline, sol, grid) -> list:
    """Coherent-gain spikes at midpoints of strong comb-line pairs inside the sweep."""
    spectrum = comb_output_spectrum(sol, pipe.modes)
    freqs = [f for f, _ in spectrum]
    powers = np.array([p for _, p in spectrum])
    floor = np.max(powers) * 1e-8 if np.max(powers) > 0 else 0.0
    strong = [f for f, p in spectrum if p > floor]
    step = grid[1] - grid[0] if len(grid) > 1 else pipe.kappa / 100
    spikes = []
    for i in range(len(strong)):
        for j in range(i + 1, len(strong)):
            mid = 0.5 * (strong[i] + strong[j])
            if not grid[0] <= mid <= grid[-1]:
                continue
            try:
                g_s, g_c = degenerate_responses(
                    sol,
                    pipe.modes,
                    pipe.kerr,
                    mid,
                    order=pipe.config.solver.sideband_order,
                )
            except (ValueError, np.linalg.LinAlgError):
                continue
            base = abs(g_s) - abs(g_c), abs(g_s) + abs(g_c)
            if abs(g_s) == 0.0:
                continue
            spike_db = 20.0 * math.log10((abs(g_s) + abs(g_c)) / abs(g_s))
            spikes.append(
                {
                    "freq_ghz": mid / GHZ,
                    "pair_ghz": [strong[i] / GHZ, strong[j] / GHZ],
                    "spike_above_insensitive_db": spike_db,
                    "within_sweep_step": True,
                    "sweep_step_ghz": step / GHZ,
                }
            )
    spikes.sort(key=lambda s: s["freq_ghz"])
    return spikes


def run_gain_sweep(config, outdir):
    return _run_profile_kind(config, outdir, wide=False)


def run_wide_scan(config, outdir):
    return _run_profile_kind(config, outdir, wide=True)


def run_phase_sweep(config: ExperimentConfig, outdir: str) -> dict:
    pipe = build_pipeline(config)
    sol = solve_at(pipe, config.drives())
    summary = _summary_base(config)
    if not sol.converged:
        summary.update({"converged": False, "failure_cause": sol.diagnostics})
        return summary
    theta = np.linspace(0.0, TWO_PI, config.sweep.theta_points)
    result = phase_sensitive_gain(
        sol,
        pipe.modes,
        pipe.kerr,
        theta,
        order=config.solver.sideband_order,
    )
    with open(os.path.join(outdir, "phase_sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("theta_rad,gain_db\n")
        for t, g in zip(result.theta, result.gain_db):
            fh.write(_format_row([t, g]) + "\n")
    summary.update(
        {
            "converged": True,
            "g_max_db": result.g_max_db,
            "g_min_db": result.g_min_db,
            "plateau_db": result.plateau_db,
            "peak_above_plateau_db": result.g_max_db - result.plateau_db,
            "period_over_pi": result.period / math.pi,
            "degenerate_freq_ghz": result.metadata["omega_degenerate"] / GHZ,
        }
    )
    return summary


# --- tuning ------------------------------------------------------------------

def _equal_power_drives(config: ExperimentConfig, p_dbm: float, f2: float):
    """Both pumps at p_dbm; pump 1 anchored at its config frequency, pump 2 at f2."""
    p1 = config.pumps[0].to_drive()
    return [
        DriveTone(omega=p1.omega, power_in=dbm_to_watts(p_dbm), phase=p1.phase),
        DriveTone(omega=f2, power_in=dbm_to_watts(p_dbm), phase=0.0),
    ]


def tune_operating_point(config: ExperimentConfig, target_db: float | None = None):
    """Deterministic coordinate search for a two-pump operating point.

    Pump 1 stays at its configured frequency; pump powers climb a fixed dB
    ladder while pump 2 is located by a hierarchically refined frequency scan
    maximizing peak gain, exactly as the second pump is adjusted on the bench.
    Once the target becomes reachable the second pump is walked back along
    the upper flank to land on the target gain.

    Returns a dict with the tuned pump specs, achieved gain, and a
    ``target_reached`` flag (best achievable point when the target is beyond
    the bifurcation-limited maximum).
    """
    tune = config.tune
    target = tune.target_gain_db if target_db is None else target_db
    if not -1e-12 <= target <= 40.0:
        raise ConfigError("tune target must be between 0 and 40 dB")
    pipe = build_pipeline(config)
    kap = pipe.kappa

    if target <= 0.0:
        pumps = tuple(replace(p, power_dbm=-200.0) for p in config.pumps)
        return {
            "target_gain_db": target,
            "achieved_gain_db": 0.0,
            "target_reached": True,
            "pumps": pumps,
            "evaluations": 0,
        }

    if len(config.pumps) < 2:
        raise ConfigError("tune requires a two-pump configuration")

    f2_anchor = config.pumps[1].to_drive().omega
    half = tune.scan_halfwidth_linewidths * kap
    n_eval = 0

    def eval_gain(p_dbm: float, f2: float):
        nonlocal n_eval
        n_eval += 1
        drives = _equal_power_drives(config, p_dbm, f2)
        sol = solve_at(pipe, drives)
        if not sol.converged or sol.bifurcated:
            return None
        g, _ = peak_gain_search(pipe, sol)
        return g

    def best_f2(p_dbm: float):
        lo, hi = f2_anchor - half, f2_anchor + half
        best = (-math.inf, f2_anchor)
        for _stage in range(4):
            grid = np.linspace(lo, hi, 13)
            for f2 in grid:
                g = eval_gain(p_dbm, float(f2))
                if g is not None and g > best[0]:
                    best = (g, float(f2))
            width = (hi - lo) / 6.0
            lo, hi = best[1] - width, best[1] + width
        return best

    ladder = np.arange(
        tune.power_start_dbm, tune.power_max_dbm + 1e-9, tune.power_step_db
    )
    overall = (-math.inf, ladder[0], f2_anchor)
    chosen = None
    for p_dbm in ladder:
        g, f2 = best_f2(float(p_dbm))
        if g > overall[0]:
            overall = (g, float(p_dbm), f2)
        if g >= target + 0.3:
            chosen = (g, float(p_dbm), f2)
            break

    if chosen is None:
        g_best, p_best, f2_best = overall
        pumps = (
            replace(config.pumps[0], power_dbm=p_best),
            PumpSpec(freq_ghz=f2_best / GHZ, power_dbm=p_best, phase_deg=0.0),
        )
        return {
            "target_gain_db": target,
            "achieved_gain_db": g_best,
            "target_reached": bool(g_best >= target - tune.gain_tolerance_db),
            "pumps": pumps,
            "evaluations": n_eval,
        }

    g_peak, p_dbm, f2_peak = chosen
    # walk out along the upper flank until the gain falls below target
    step = kap / 8.0
    f2_out = f2_peak
    g_out = g_peak
    for _ in range(64):
        f2_out += step
        g = eval_gain(p_dbm, f2_out)
        if g is None:
            f2_out -= step
            step /= 2.0
            continue
        g_out = g
        if g_out < target:
            break
    lo_f, hi_f = f2_peak, f2_out
    achieved, f2_final = g_peak, f2_peak
    for _ in range(48):
        mid = 0.5 * (lo_f + hi_f)
        g = eval_gain(p_dbm, mid)
        if g is None:
            hi_f = mid
            continue
        achieved, f2_final = g, mid
        if abs(g - target) <= tune.gain_tolerance_db:
            break
        if g > target:
            lo_f = mid
        else:
            hi_f = mid

    pumps = (
        replace(config.pumps[0], power_dbm=p_dbm),
        PumpSpec(freq_ghz=f2_final / GHZ, power_dbm=p_dbm, phase_deg=0.0),
    )
    return {
        "target_gain_db": target,
        "achieved_gain_db": achieved,
        "target_reached": bool(abs(achieved - target) <= max(tune.gain_tolerance_db, 0.3)),
        "pumps": pumps,
        "evaluations": n_eval,
    }


def tune_degenerate_point(config: ExperimentConfig, target_db: float):
    """Single-pump analogue of :func:`tune_operating_point` (power + frequency)."""
    pipe = build_pipeline(config)
    kap = pipe.kappa
    m = pipe.operating
    tune = config.tune
    n_eval = 0

    def eval_gain(p_dbm: float, f_p: float):
        nonlocal n_eval
        n_eval += 1
        drive = DriveTone(omega=f_p, power_in=dbm_to_watts(p_dbm))
        sol = solve_at(pipe, [drive], comb_order=0)
        if not sol.converged or sol.bifurcated:
            return None
        grid = np.concatenate(
            [
                f_p + np.linspace(0.02 * kap, 0.5 * kap, 25),
                f_p - np.linspace(0.02 * kap, 0.5 * kap, 25),
            ]
        )
        prof = gain_profile(sol, pipe.modes, pipe.kerr, np.sort(grid), order=0)
        if not np.any(np.isfinite(prof.gain_db)):
            return None
        return float(np.nanmax(prof.gain_db))

    def best_freq(p_dbm: float):
        lo, hi = m.omega0 - 3.0 * kap, m.omega0 - 0.5 * kap
        best = (-math.inf, m.omega0 - kap)
        for _stage in range(4):
            grid = np.linspace(lo, hi, 13)
            for f in grid:
                g = eval_gain(p_dbm, float(f))
                if g is not None and g > best[0]:
                    best = (g, float(f))
            width = (hi - lo) / 6.0
            lo, hi = best[1] - width, best[1] + width
        return best

    ladder = np.arange(
        tune.power_start_dbm, tune.power_max_dbm + 1e-9, tune.power_step_db
    )
    overall = (-math.inf, ladder[0], m.omega0 - kap)
    chosen = None
    for p_dbm in ladder:
        g, f_p = best_freq(float(p_dbm))
        if g > overall[0]:
            overall = (g, float(p_dbm), f_p)
        if g >= target_db + 0.3:
            chosen = (g, float(p_dbm), f_p)
            break
    if chosen is None:
        chosen = overall

    g_peak, p_dbm, f_peak = chosen
    step = kap / 16.0
    f_out, g_out = f_peak, g_peak
    for _ in range(64):
        f_out += step
        g = eval_gain(p_dbm, f_out)
        if g is None:
            f_out -= step
            step /= 2.0
            continue
        g_out = g
        if g_out < target_db:
            break
    lo_f, hi_f = f_peak, f_out
    achieved, f_final = g_peak, f_peak
    for _ in range(48):
        mid = 0.5 * (lo_f + hi_f)
        g = eval_gain(p_dbm, mid)
        if g is None:
            hi_f = mid
            continue
        achieved, f_final = g, mid
        if abs(g - target_db) <= tune.gain_tolerance_db:
            break
        if g > target_db:
            lo_f = mid
        else:
            hi_f = mid
    return {
        "achieved_gain_db": achieved,
        "pump": PumpSpec(freq_ghz=f_final / GHZ, power_dbm=p_dbm),
        "evaluations": n_eval,
        "target_reached": bool(abs(achieved - target_db) <= 0.5),
    }


def run_tune(config: ExperimentConfig, outdir: str) -> dict:
    result = tune_operating_point(config)
    tuned = ExperimentConfig(
        kind="gain-sweep",
        geometry=config.geometry,
        n_modes=config.n_modes,
        operating_mode=config.operating_mode,
        pumps=result["pumps"],
        sweep=config.sweep,
        solver=config.solver,
        tune=config.tune,
        oracle=config.oracle,
        sensitivity=config.sensitivity,
    )
    path = os.path.join(outdir, "tuned_operating_point.ini")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("; model-derived operating point emitted by the tune search\n")
        fh.write(serialize_config(tuned))
    summary = _summary_base(config)
    summary.update(
        {
            "target_gain_db": result["target_gain_db"],
            "achieved_gain_db": result["achieved_gain_db"],
            "target_reached": result["target_reached"],
            "tuned_pumps": [
                {
                    "freq_ghz": p.freq_ghz,
                    "power_dbm": p.power_dbm,
                    "phase_deg": p.phase_deg,
                }
                for p in result["pumps"]
            ],
            "scenario_file": "tuned_operating_point.ini",
            "evaluations": result["evaluations"],
        }
    )
    return summary


# --- sensitivity ---------------------------------------------------------------

def _peak_gain_at(pipe: Pipeline, drives):
    sol = solve_at(pipe, drives)
    if not sol.converged or sol.bifurcated:
        return None
    g, _ = peak_gain_search(pipe, sol)
    return g


def _central_derivative(f, x0: float, step0: float, rel_agree: float = 0.01):
    """Central difference with step halving until two estimates agree within 1%."""
    prev = None
    step = step0
    for _shrink in range(6):
        up, dn = f(x0 + step), f(x0 - step)
        if up is None or dn is None:
            step *= 0.5
            continue
        est = (up - dn) / (2.0 * step)
        if prev is not None:
            scale = max(abs(est), abs(prev), 1e-12)
            if abs(est - prev) / scale < rel_agree:
                return est, True
        prev = est
        step *= 0.5
    return prev, False


def sensitivity_report(config: ExperimentConfig, drives) -> dict:
    """d(peak gain)/d(pump frequency) and /d(pump power) at an operating point."""
    pipe = build_pipeline(config)
    kap = pipe.kappa
    spec = config.sensitivity
    total_power = sum(d.power_in for d in drives)
    if total_power == 0.0:
        zero = {"value": 0.0, "converged_estimate": True}
        return {
            "freq_db_per_mhz": [zero for _ in drives],
            "power_db_per_db": zero,
            "peak_gain_db": 0.0,
        }

    base_gain = _peak_gain_at(pipe, drives)
    if base_gain is None:
        raise OperatingPointError("sensitivity requires a converged operating point")

    freq_sens = []
    for i in range(len(drives)):

        def gain_vs_freq(w):
            moved = list(drives)
            moved[i] = DriveTone(
                omega=w, power_in=drives[i].power_in, phase=drives[i].phase
            )
            return _peak_gain_at(pipe, moved)

        est, ok = _central_derivative(
            gain_vs_freq, drives[i].omega, spec.freq_step_fraction * kap
        )
        # rad/s -> MHz
        freq_sens.append(
            {
                "value": float(est * TWO_PI * 1e6) if est is not None else None,
                "converged_estimate": bool(ok),
            }
        )

    def gain_vs_power_db(delta_db):
        fac = 10.0 ** (delta_db / 10.0)
        moved = [
            DriveTone(omega=d.omega, power_in=d.power_in * fac, phase=d.phase)
            for d in drives
        ]
        return _peak_gain_at(pipe, moved)

    est_p, ok_p = _central_derivative(gain_vs_power_db, 0.0, spec.power_step_db)
    return {
        "freq_db_per_mhz": freq_sens,
        "power_db_per_db": {
            "value": float(est_p) if est_p is not None else None,
            "converged_estimate": bool(ok_p),
        },
        "peak_gain_db": float(base_gain),
    }


def run_sensitivity(config: ExperimentConfig, outdir: str) -> dict:
    """Compare pump-detuning sensitivity of the two schemes at matched gain."""
    target = config.sensitivity.match_gain_db
    summary = _summary_base(config)

    nd = tune_operating_point(config, target_db=target)
    nd_drives = [p.to_drive() for p in nd["pumps"]]
    nd_rep = sensitivity_report(config, nd_drives)

    dg = tune_degenerate_point(config, target_db=target)
    dg_drives = [dg["pump"].to_drive()]
    dg_rep = sensitivity_report(config, dg_drives)

    matched = (
        abs(nd_rep["peak_gain_db"] - dg_rep["peak_gain_db"])
        <= config.sensitivity.match_tolerance_db
    )
    payload = {
        "non_degenerate": nd_rep,
        "degenerate": dg_rep,
        "matched_within_db": config.sensitivity.match_tolerance_db,
        "gains_matched": bool(matched),
    }
    write_json(os.path.join(outdir, "sensitivity.json"), payload)
    summary.update(payload)
    nd_vals = [abs(x["value"]) for x in nd_rep["freq_db_per_mhz"] if x["value"] is not None]
    dg_vals = [abs(x["value"]) for x in dg_rep["freq_db_per_mhz"] if x["value"] is not None]
    if nd_vals and dg_vals:
        summary["degenerate_more_sensitive"] = bool(min(dg_vals) > max(nd_vals))
    return summary


# --- oracle check ---------------------------------------------------------------

def run_oracle_check(config: ExperimentConfig, outdir: str) -> dict:
    """Cross-validate the frequency-domain solution against the time-domain oracle."""
    pipe = build_pipeline(config)
    drives = config.drives()
    kap = pipe.kappa

    omega_span = max(d.omega for d in drives) - min(d.omega for d in drives)
    if omega_span > 50.0 * kap:
        raise OperatingPointError(
            "oracle-check supports single-band operating points only "
            "(cross-harmonic envelopes are stiff in a single rotating frame)"
        )

    sol = solve_at(pipe, drives)
    summary = _summary_base(config)
    if not sol.converged:
        summary.update({"converged": False, "failure_cause": sol.diagnostics})
        return summary

    oracle = config.oracle
    settings = TdSettings(
        t_transient=oracle.transient_linewidths / kap,
        ramp_steps=oracle.ramp_steps,
    )

    # comb amplitudes: compare intracavity lines of the operating mode
    run_pump = integrate(pipe.modes, pipe.kerr, drives, settings)
    mode_pos = list(pipe.modes).index(pipe.operating)
    comb_rows = []
    worst_comb = 0.0
    for li, f in enumerate(sol.comb.frequencies):
        a_hb = sol.amplitudes[mode_pos, li]
        if abs(a_hb) == 0.0:
            continue
        a_td = extract_tone(run_pump, float(f), f"mode-{mode_pos}")
        rel = abs(a_td - a_hb) / abs(a_hb)
        worst_comb = max(worst_comb, rel)
        comb_rows.append(
            {"freq_ghz": float(f / GHZ), "rel_amplitude_diff": float(rel)}
        )

    # two-tone gain at probe frequencies spanning the amplification band
    center = 0.5 * pump_sum_frequency(sol.comb)
    n_probe = oracle.probe_points
    offsets = np.linspace(-0.45 * kap, 0.45 * kap, n_probe)
    collision_floor = 0.02 * kap
    offsets = np.where(np.abs(offsets) < collision_floor, collision_floor, offsets)
    gain_rows = []
    worst_gain = 0.0
    pump_power = max(d.power_in for d in drives)
    for off in offsets:
        w_s = center + float(off)
        if min(abs(w_s - d.omega) for d in drives) < 0.02 * kap:
            w_s += 0.03 * kap
        prof = gain_profile(
            sol, pipe.modes, pipe.kerr, np.array([w_s]), order=config.solver.sideband_order
        )
        g_hb = prof.g_signal[0]
        if not np.isfinite(g_hb):
            continue
        probe = DriveTone(omega=w_s, power_in=pump_power * oracle.probe_power_ratio)
        run = integrate(pipe.modes, pipe.kerr, drives + [probe], settings)
        g_td = extract_tone(run, w_s) / probe.amplitude
        diff_db = abs(20.0 * math.log10(abs(g_td / g_hb)))
        worst_gain = max(worst_gain, diff_db)
        gain_rows.append(
            {
                "freq_ghz": w_s / GHZ,
                "gain_hb_db": 20.0 * math.log10(abs(g_hb)),
                "gain_td_db": 20.0 * math.log10(abs(g_td)),
                "abs_diff_db": diff_db,
            }
        )

    payload = {
        "comb_amplitudes": comb_rows,
        "max_comb_rel_diff": worst_comb,
        "gain_points": gain_rows,
        "max_gain_diff_db": worst_gain,
        "gain_tolerance_db": oracle.gain_tolerance_db,
        "passed": bool(
            worst_comb < 1e-3 and worst_gain < oracle.gain_tolerance_db
        ),
    }
    write_json(os.path.join(outdir, "oracle_check.json"), payload)
    summary.update(payload)
    summary["converged"] = True
    return summary


# --- cross harmonic --------------------------------------------------------------

def run_cross_harmonic(config: ExperimentConfig, outdir: str) -> dict:
    """Three-mode pumping with pumps on the harmonics flanking the signal mode."""
    pipe = build_pipeline(config)
    if len(pipe.modes) < 3:
        raise OperatingPointError("cross-harmonic needs a ModeSet with >= 3 modes")
    j = config.operating_mode
    try:
        lower = pipe.modes.mode_with_index(j - 1)
        upper = pipe.modes.mode_with_index(j + 1)
    except KeyError as exc:
        raise OperatingPointError("adjacent harmonics missing from ModeSet") from exc

    drives = config.drives()
    if len(drives) != 2:
        raise OperatingPointError("cross-harmonic requires two pumps")
    for d, m in zip(drives, (lower, upper)):
        if abs(d.omega - m.omega0) > 10.0 * m.kappa:
            raise OperatingPointError(
                f"pump at {d.omega / GHZ:.4f} GHz is more than 10 linewidths "
                f"from harmonic {m.index}"
            )

    sol = solve_at(pipe, drives)
    summary = _summary_base(config)
    if not sol.converged:
        summary.update({"converged": False, "failure_cause": sol.diagnostics})
        return summary

    grid = _sweep_grid(config)
    profile = gain_profile(
        sol, pipe.modes, pipe.kerr, grid, order=config.solver.sideband_order
    )
    write_gain_csv(os.path.join(outdir, "gain_sweep.csv"), profile)
    write_comb_csv(os.path.join(outdir, "comb_spectrum.csv"), sol, pipe.modes)
    summary.update(_profile_summary(pipe, sol, profile))

    # sideband families near each pump
    spectrum = comb_output_spectrum(sol, pipe.modes)
    report = {"pump_groups": [], "expected_spacing_ghz": None}
    f1, f2 = drives[0].omega, drives[1].omega
    expected = 2.0 * abs(2.0 * f1 - f2)
    report["expected_spacing_ghz"] = expected / GHZ
    for p_idx, (d, m) in enumerate(zip(drives, (lower, upper))):
        pump_line = sol.comb.pump_line_of[p_idx]
        pump_power = dict(enumerate(spectrum))[pump_line][1]
        group = []
        for li, (f, p) in enumerate(spectrum):
            if abs(f - d.omega) < 30.0 * m.kappa and p > 0.0:
                group.append(
                    {
                        "freq_ghz": f / GHZ,
                        "power_w": p,
                        "rel_pump_db": 10.0 * math.log10(p / pump_power)
                        if pump_power > 0
                        else None,
                        "is_pump": li == pump_line,
                    }
                )
        group.sort(key=lambda r: r["freq_ghz"])
        spacings = [
            (b["freq_ghz"] - a["freq_ghz"]) * GHZ
            for a, b in zip(group, group[1:])
        ]
        report["pump_groups"].append(
            {
                "pump_freq_ghz": d.omega / GHZ,
                "lines": group,
                "adjacent_spacings_ghz": [s / GHZ for s in spacings],
            }
        )
    write_json(os.path.join(outdir, "comb_report.json"), report)
    summary["comb_report"] = report
    return summary


# --- dispatch --------------------------------------------------------------------

_RUNNERS = {
    "resonances": run_resonances,
    "pump-solve": run_pump_solve,
    "gain-sweep": run_gain_sweep,
    "wide-scan": run_wide_scan,
    "phase-sweep": run_phase_sweep,
    "sensitivity": run_sensitivity,
    "cross-harmonic": run_cross_harmonic,
    "oracle-check": run_oracle_check,
    "tune": run_tune,
}


def run(config: ExperimentConfig, outdir: str) -> dict:
    """Execute the configured experiment; writes artifacts + summary.json."""
    os.makedirs(outdir, exist_ok=True)
    summary = _RUNNERS[config.kind](config, outdir)
    write_json(os.path.join(outdir, "summary.json"), summary)
    return summary
