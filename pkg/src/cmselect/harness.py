"""Monte Carlo harness: size sweeps, corrections, and local-power runs.

The experimental design is fully determined by a mean vector, a correlation
matrix, and the standard normal shape of the driving noise, so samples are
synthesized directly as mean + correlated normals. Null configurations place
each mean coordinate at 0 or at +inf (realized as a large surrogate);
alternatives supply finite vectors that the harness scales by 1/sqrt(n).

Size is summarized by the maximum null rejection probability (MNRP) over the
null configurations. Before power comparisons each selection-based procedure
receives an additive critical-value correction chosen so its MNRP matches the
two-step baseline's, making the power comparison fair.

Within one replication every procedure and statistic consumes the same sample
and the same bootstrap draws, so cross-procedure comparisons are paired.
Replications draw from substreams derived from (seed, phase, pattern,
replication), which makes results byte-identical regardless of how the work
is scheduled across threads.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .critical import (
    BootstrapDraws,
    RmsTables,
    gms_selection,
    min_off_diagonal,
    rsw_critical_value,
    upper_quantile,
)
from .errors import DomainError, MissingBaseline
from .moments import CorrelationFamily, MomentSample, cholesky_factor, make_toeplitz, summarize
from .selection import KappaSchedule, kappa as kappa_eval, phi_k
from .statistics import StatisticKind, evaluate
from .streams import BOOTSTRAP, SAMPLE_DRAW, substream
from .tilt import tilt, tilted_selection

PHASE_NULL = 0
PHASE_POWER = 1

PROCEDURES = ("GMS", "CMS", "CMS_FC", "RSW", "RMS")
# Procedures whose critical values receive the additive MNRP correction; the
# two-step test is the baseline and stays uncorrected.
CORRECTED_PROCEDURES = ("GMS", "CMS", "CMS_FC", "RMS")


def default_replications(j: int) -> int:
    return 2500 if j >= 10 else 10000


def null_patterns(j: int, scheme: str = "auto") -> tuple:
    """Enumerate 0/+inf mean configurations with at least one zero.

    "full" walks all 2^J - 1 of them. The default walks all of them up to
    J = 4 and, above that, the all-binding pattern plus every pattern with a
    single +inf and every pattern with a single 0 (the configurations where
    the extremes have been observed to occur).
    """
    if scheme == "full" or (scheme == "auto" and j <= 4):
        patterns = [
            p for p in itertools.product((0.0, math.inf), repeat=j) if 0.0 in p
        ]
        return tuple(patterns)
    if scheme != "auto":
        raise DomainError(f"unknown null pattern scheme {scheme!r}")
    patterns = [tuple(0.0 for _ in range(j))]
    for k in range(j):
        patterns.append(tuple(math.inf if i == k else 0.0 for i in range(j)))
    for k in range(j):
        patterns.append(tuple(0.0 if i == k else math.inf for i in range(j)))
    return tuple(patterns)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a size or power experiment needs, seed included."""

    J: int
    family: CorrelationFamily
    n: int
    r_mc: int
    b: int = 10000
    alpha: float = 0.05
    kappa: KappaSchedule = field(default_factory=lambda: KappaSchedule.parse("sqrt-log-n"))
    procedures: tuple = ("GMS", "CMS")
    statistics: tuple = (StatisticKind.MMM, StatisticKind.AQLR)
    null_mu: tuple = ()
    alternative_mu: tuple = ()
    seed: int = 0
    infinity_surrogate: float = 10.0
    beta: float | None = None
    phi: int = 1
    rms_tables: RmsTables | None = None
    retain_critical_values: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.r_mc < 1:
            raise DomainError("r_mc must be at least 1")
        if self.b < 100:
            raise DomainError("bootstrap draw count must be at least 100")
        if self.J != self.family.J:
            raise DomainError("J must match the correlation family")
        for proc in self.procedures:
            if proc not in PROCEDURES:
                raise DomainError(f"unknown procedure {proc!r}")
        if "RMS" in self.procedures and self.rms_tables is None:
            raise DomainError("RMS requires lookup tables; omit it or supply them")
        for mu in self.null_mu:
            entries = tuple(mu)
            if len(entries) != self.J:
                raise DomainError("null pattern length must equal J")
            if not all(e == 0.0 or math.isinf(e) for e in entries):
                raise DomainError("null patterns may only contain 0 and +inf")
            if 0.0 not in entries:
                raise DomainError("null patterns need at least one binding moment")
        for mu in self.alternative_mu:
            if len(tuple(mu)) != self.J:
                raise DomainError("alternative mean length must equal J")
            if not all(math.isfinite(e) for e in mu):
                raise DomainError("alternative means must be finite")

    @property
    def beta_value(self) -> float:
        return self.alpha / 10.0 if self.beta is None else self.beta


@dataclass
class CellResult:
    """Per (procedure, statistic) record of an experiment."""

    procedure: str
    statistic: str
    statistic_values: np.ndarray  # (patterns, replications)
    critical_values: np.ndarray  # (patterns, replications)
    rejections: np.ndarray  # (patterns, replications) boolean
    rates: np.ndarray  # (patterns,)
    standard_errors: np.ndarray  # (patterns,)
    mnrp: float | None = None
    mnrp_pattern: int | None = None
    correction: float = 0.0

    @classmethod
    def from_draws(cls, procedure, statistic, stats, cvs, rejections, r_mc):
        rates = rejections.mean(axis=1)
        ses = np.sqrt(rates * (1.0 - rates) / r_mc)
        return cls(
            procedure=procedure,
            statistic=statistic,
            statistic_values=stats,
            critical_values=cvs,
            rejections=rejections,
            rates=rates,
            standard_errors=ses,
        )


@dataclass
class ExperimentResult:
    """Results of one MNRP sweep or one power run."""

    config: ExperimentConfig
    phase: str  # "mnrp" or "power"
    patterns: tuple
    cells: dict  # (procedure, statistic-name) -> CellResult
    diagnostics: dict = field(default_factory=dict)
    corrections: dict = field(default_factory=dict)
    retained_critical_values: dict = field(default_factory=dict)

    def cell(self, procedure: str, kind: StatisticKind) -> CellResult:
        return self.cells[(procedure, kind.value)]


# ---------------------------------------------------------------------------
# Sample synthesis
# ---------------------------------------------------------------------------


def simulate_sample(
    family: CorrelationFamily,
    mu,
    n: int,
    rng: np.random.Generator,
    infinity_surrogate: float = 10.0,
    chol: np.ndarray | None = None,
) -> MomentSample:
    """Draw n rows of mean mu (with +inf realized as the surrogate) and
    correlation given by the family; variances are one by construction."""
    if chol is None:
        chol = cholesky_factor(make_toeplitz(family))
    mu_eff = np.array([infinity_surrogate if math.isinf(m) else float(m) for m in mu])
    z = rng.standard_normal((n, chol.shape[0]))
    return MomentSample(mu_eff + z @ chol.T)


# ---------------------------------------------------------------------------
# One replication
# ---------------------------------------------------------------------------


def _replicate(config: ExperimentConfig, chol, mu, phase: int, pattern_idx: int, rep_idx: int):
    """Run every configured procedure and statistic on one synthetic sample.

    Returns {"stat": {kind: T}, "cv": {(proc, kind): value}, "flags": {...}}.
    A failure is re-raised with the replication coordinates attached.
    """
    try:
        rng_sample = substream(config.seed, phase, pattern_idx, rep_idx, SAMPLE_DRAW)
        sample = simulate_sample(
            config.family, mu, config.n, rng_sample, config.infinity_surrogate, chol=chol
        )
        summary = summarize(sample)
        rng_boot = substream(config.seed, phase, pattern_idx, rep_idx, BOOTSTRAP)
        draws = BootstrapDraws(sample, summary, config.b, rng_boot)

        stats = {kind: evaluate(kind, summary) for kind in config.statistics}
        selections = {}
        flags = {}

        if "GMS" in config.procedures:
            selections["GMS"] = gms_selection(summary, config.kappa, config.phi)
        if "CMS" in config.procedures or "CMS_FC" in config.procedures:
            tilt_result = tilt(sample)
            flags["tilt_infeasible"] = not tilt_result.solved
            k_val = kappa_eval(config.kappa, config.n)
            for proc, fully in (("CMS", False), ("CMS_FC", True)):
                if proc not in config.procedures:
                    continue
                if tilt_result.solved:
                    xi = tilted_selection(
                        sample, k_val, fully, result=tilt_result, summary=summary
                    )
                    omega = summary.correlation
                    if fully:
                        var = np.diag(tilt_result.tilted_cov)
                        inv_sd = 1.0 / np.sqrt(var)
                        omega = tilt_result.tilted_cov * np.outer(inv_sd, inv_sd)
                    selections[proc] = phi_k(config.phi, xi, omega)
                else:
                    selections[proc] = gms_selection(summary, config.kappa, config.phi)
        if "RMS" in config.procedures:
            delta_hat = min_off_diagonal(summary.correlation)
            kappa_hat = config.rms_tables.kappa_at(delta_hat)
            eta_hat = config.rms_tables.eta_at(delta_hat, config.J)
            rms_schedule = KappaSchedule.parse(f"fixed:{kappa_hat}")
            selections["RMS"] = gms_selection(summary, rms_schedule, config.phi)
            flags["rms_eta"] = eta_hat

        cvs = {}
        quantile_cache: dict = {}
        level = 1.0 - config.alpha
        for proc in config.procedures:
            if proc == "RSW":
                continue
            sel = selections[proc]
            for kind in config.statistics:
                key = (kind, sel.shifts.tobytes())
                if key not in quantile_cache:
                    quantile_cache[key] = draws.selection_quantile(sel, kind, level)
                value = quantile_cache[key]
                if proc == "RMS":
                    value += flags["rms_eta"]
                cvs[(proc, kind)] = value

        if "RSW" in config.procedures:
            beta = config.beta_value
            for kind in config.statistics:
                report, first_stage = rsw_critical_value(draws, summary, kind, config.alpha, beta)
                cvs[("RSW", kind)] = report.value
                flags["rsw_first_stage"] = first_stage
                flags["rsw_no_omission"] = report.supplementary["no_omission"]

        return {"stat": stats, "cv": cvs, "flags": flags}
    except Exception as err:
        raise RuntimeError(
            f"replication failed at pattern {pattern_idx}, replication {rep_idx}: {err}"
        ) from err


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------


def _run_phase(config: ExperimentConfig, patterns, phase: int) -> dict:
    """Execute r_mc replications at every pattern; returns raw arrays."""
    n_patterns = len(patterns)
    r_mc = config.r_mc
    chol = cholesky_factor(make_toeplitz(config.family))

    stat_arr = {
        kind: np.empty((n_patterns, r_mc)) for kind in config.statistics
    }
    cv_arr = {
        (proc, kind): np.empty((n_patterns, r_mc))
        for proc in config.procedures
        for kind in config.statistics
    }
    tilt_infeasible = np.zeros((n_patterns, r_mc), dtype=bool)
    rsw_first = np.zeros((n_patterns, r_mc), dtype=bool)
    rsw_keep_all = np.zeros((n_patterns, r_mc), dtype=bool)

    def run_one(task):
        p, r = task
        return p, r, _replicate(config, chol, patterns[p], phase, p, r)

    tasks = [(p, r) for p in range(n_patterns) for r in range(r_mc)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = pool.map(run_one, tasks, chunksize=32)
            for p, r, record in results:
                _store(record, p, r, stat_arr, cv_arr, tilt_infeasible, rsw_first, rsw_keep_all)
    else:
        for task in tasks:
            p, r, record = run_one(task)
            _store(record, p, r, stat_arr, cv_arr, tilt_infeasible, rsw_first, rsw_keep_all)

    return {
        "stat": stat_arr,
        "cv": cv_arr,
        "tilt_infeasible": tilt_infeasible,
        "rsw_first": rsw_first,
        "rsw_keep_all": rsw_keep_all,
    }


def _store(record, p, r, stat_arr, cv_arr, tilt_infeasible, rsw_first, rsw_keep_all):
    for kind, value in record["stat"].items():
        stat_arr[kind][p, r] = value
    for key, value in record["cv"].items():
        cv_arr[key][p, r] = value
    flags = record["flags"]
    tilt_infeasible[p, r] = flags.get("tilt_infeasible", False)
    rsw_first[p, r] = flags.get("rsw_first_stage", False)
    rsw_keep_all[p, r] = flags.get("rsw_no_omission", False)


def run_mnrp(config: ExperimentConfig, patterns=None) -> ExperimentResult:
    """Size sweep: rejection rates over the null patterns and their maximum."""
    if patterns is None:
        patterns = config.null_mu or null_patterns(config.J)
    raw = _run_phase(config, patterns, PHASE_NULL)

    cells = {}
    for proc in config.procedures:
        for kind in config.statistics:
            stats = raw["stat"][kind]
            cvs = raw["cv"][(proc, kind)]
            rejections = stats > cvs
            if proc == "RSW":
                rejections = rejections & raw["rsw_first"]
            cell = CellResult.from_draws(proc, kind.value, stats, cvs, rejections, config.r_mc)
            best = int(np.argmax(cell.rates))
            cell.mnrp = float(cell.rates[best])
            cell.mnrp_pattern = best
            cells[(proc, kind.value)] = cell

    diagnostics = {
        "tilt_infeasible_count": int(raw["tilt_infeasible"].sum()),
        "rsw_first_stage_rate": float(raw["rsw_first"].mean()) if "RSW" in config.procedures else None,
        "rsw_no_omission_rate": float(raw["rsw_keep_all"].mean()) if "RSW" in config.procedures else None,
    }
    return ExperimentResult(
        config=config,
        phase="mnrp",
        patterns=tuple(tuple(p) for p in patterns),
        cells=cells,
        diagnostics=diagnostics,
    )


def mnrp_correction(result: ExperimentResult, procedure: str, kind: StatisticKind) -> float:
    """Additive critical-value constant aligning a procedure's MNRP with the
    two-step baseline's.

    Takes the procedure's maximizing null pattern, forms the exceedances
    T - c across its replications, and returns their quantile at one minus
    the baseline MNRP. Raises MissingBaseline when the sweep did not include
    the two-step procedure.
    """
    if result.phase != "mnrp":
        raise MissingBaseline("corrections need an MNRP sweep result")
    baseline = result.cells.get(("RSW", kind.value))
    if baseline is None:
        raise MissingBaseline("the two-step baseline was not part of the sweep")
    cell = result.cells.get((procedure, kind.value))
    if cell is None:
        raise MissingBaseline(f"procedure {procedure} was not part of the sweep")
    p_star = cell.mnrp_pattern
    exceedances = cell.statistic_values[p_star] - cell.critical_values[p_star]
    level = 1.0 - baseline.mnrp
    return float(upper_quantile(exceedances, level))


def corrections_from(result: ExperimentResult) -> dict:
    """All corrections an MNRP sweep supports: {(procedure, statistic): delta}."""
    out = {}
    for proc in result.config.procedures:
        if proc == "RSW":
            continue
        if proc not in CORRECTED_PROCEDURES:
            continue
        for kind in result.config.statistics:
            out[(proc, kind.value)] = mnrp_correction(result, proc, kind)
    return out


def run_power(config: ExperimentConfig, corrections: dict | None = None, alternatives=None) -> ExperimentResult:
    """Local-power run at mu / sqrt(n) with corrected critical values.

    ``corrections`` maps (procedure, statistic-name) to the additive constant
    from `mnrp_correction`; the two-step baseline runs uncorrected. Rejection
    uses T > c + delta (plus the first-stage event for the two-step test).
    """
    if alternatives is None:
        alternatives = config.alternative_mu
    if not alternatives:
        raise DomainError("power runs need at least one alternative mean vector")
    corrections = corrections or {}
    for proc in config.procedures:
        if proc in CORRECTED_PROCEDURES:
            for kind in config.statistics:
                if (proc, kind.value) not in corrections:
                    raise MissingBaseline(
                        f"no MNRP correction supplied for {proc}-{kind.value}"
                    )

    scaled = tuple(
        tuple(float(m) / math.sqrt(config.n) for m in mu) for mu in alternatives
    )
    raw = _run_phase(config, scaled, PHASE_POWER)

    cells = {}
    retained = {}
    for proc in config.procedures:
        for kind in config.statistics:
            delta = corrections.get((proc, kind.value), 0.0)
            stats = raw["stat"][kind]
            corrected_cvs = raw["cv"][(proc, kind)] + delta
            rejections = stats > corrected_cvs
            if proc == "RSW":
                rejections = rejections & raw["rsw_first"]
            cell = CellResult.from_draws(
                proc, kind.value, stats, corrected_cvs, rejections, config.r_mc
            )
            cell.correction = delta
            cells[(proc, kind.value)] = cell
            if config.retain_critical_values:
                retained[(proc, kind.value)] = corrected_cvs

    diagnostics = {
        "tilt_infeasible_count": int(raw["tilt_infeasible"].sum()),
        "rsw_first_stage_rate": float(raw["rsw_first"].mean()) if "RSW" in config.procedures else None,
        "rsw_no_omission_rate": float(raw["rsw_keep_all"].mean()) if "RSW" in config.procedures else None,
    }
    diagnostics.update(_ordering_diagnostics(config, raw))

    return ExperimentResult(
        config=config,
        phase="power",
        patterns=tuple(tuple(mu) for mu in alternatives),
        cells=cells,
        diagnostics=diagnostics,
        corrections={f"{k[0]}-{k[1]}": v for k, v in corrections.items()},
        retained_critical_values=retained,
    )


def _ordering_diagnostics(config: ExperimentConfig, raw: dict) -> dict:
    """Frequency of the per-replication critical-value ordering CMS <= GMS <= RSW."""
    out = {}
    needed = {"GMS", "CMS", "RSW"}
    if not needed.issubset(set(config.procedures)):
        return out
    for kind in config.statistics:
        cms = raw["cv"][("CMS", kind)]
        gms = raw["cv"][("GMS", kind)]
        rsw = raw["cv"][("RSW", kind)]
        tol = 1e-12
        event = (cms <= gms + tol) & (gms <= rsw + tol)
        out[f"cv_ordering_rate_{kind.value}"] = float(event.mean())
    return out


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _pattern_id(mu) -> str:
    return "(" + ",".join("inf" if math.isinf(m) else f"{m:g}" for m in mu) + ")"


def emit(result: ExperimentResult, fmt: str, path) -> None:
    """Write an experiment result to disk as CSV (flat cells) or JSON (full)."""
    if fmt == "csv":
        _emit_csv(result, path)
    elif fmt == "json":
        _emit_json(result, path)
    else:
        raise DomainError(f"unknown output format {fmt!r}")


def _emit_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["procedure", "statistic", "J", "family", "n", "mu", "rate", "se", "delta"]
        )
        for (proc, kind), cell in sorted(result.cells.items()):
            for p, mu in enumerate(result.patterns):
                writer.writerow(
                    [
                        proc,
                        kind,
                        result.config.J,
                        result.config.family.kind,
                        result.config.n,
                        _pattern_id(mu),
                        f"{cell.rates[p]:.6f}",
                        f"{cell.standard_errors[p]:.6f}",
                        f"{cell.correction:.6f}",
                    ]
                )


def _emit_json(result: ExperimentResult, path) -> None:
    payload = {
        "phase": result.phase,
        "config": {
            "J": result.config.J,
            "family": result.config.family.kind,
            "rho": list(result.config.family.rho),
            "n": result.config.n,
            "r_mc": result.config.r_mc,
            "b": result.config.b,
            "alpha": result.config.alpha,
            "kappa": result.config.kappa.spell(),
            "procedures": list(result.config.procedures),
            "statistics": [k.value for k in result.config.statistics],
            "seed": result.config.seed,
            "infinity_surrogate": result.config.infinity_surrogate,
            "phi": result.config.phi,
        },
        "patterns": [_pattern_id(mu) for mu in result.patterns],
        "cells": {},
        "diagnostics": result.diagnostics,
        "corrections": result.corrections,
    }
    for (proc, kind), cell in result.cells.items():
        entry = {
            "rates": cell.rates.tolist(),
            "standard_errors": cell.standard_errors.tolist(),
            "correction": cell.correction,
        }
        if cell.mnrp is not None:
            entry["mnrp"] = cell.mnrp
            entry["mnrp_pattern"] = _pattern_id(result.patterns[cell.mnrp_pattern])
        payload["cells"][f"{proc}-{kind}"] = entry
    for (proc, kind), cvs in result.retained_critical_values.items():
        payload["cells"][f"{proc}-{kind}"]["critical_value_samples"] = cvs.ravel().tolist()
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)


__all__ = [
    "CellResult",
    "ExperimentConfig",
    "ExperimentResult",
    "corrections_from",
    "default_replications",
    "emit",
    "mnrp_correction",
    "null_patterns",
    "run_mnrp",
    "run_power",
    "simulate_sample",
]
