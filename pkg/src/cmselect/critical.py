"""Critical values and test decisions.

All procedures simulate the null distribution of the statistic at a selected
shift vector and read off an upper quantile. Two simulation modes exist:

* asymptotic: draws are correlated standard normals built from the Cholesky
  factor of the sample correlation matrix;
* bootstrap: draws are recentered, studentized resampled means.

The empirical quantile at level q is the order statistic at index ceil(q * R)
of the sorted draws, the right-continuous inverse of the empirical CDF.

The bootstrap machinery is shared: one `BootstrapDraws` object per sample
carries the per-replicate summaries, and every procedure (and both
statistics) reads from it. That makes comparisons across procedures paired
by construction whenever they are given the same draws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, MissingTable, TooManyDegenerate
from .moments import (
    MomentSample,
    MomentSummary,
    cholesky_factor,
    studentized_scaled_mean,
    summarize,
)
from .selection import KappaSchedule, SelectionVector, kappa as kappa_value, phi_k
from .statistics import StatisticKind, evaluate, shifted_statistic_batch
from .streams import ASYMPTOTIC, BOOTSTRAP, substream
from .tilt import TiltResult, tilt, tilted_selection

# Share of degenerate bootstrap replicates tolerated before aborting.
_DEGENERATE_CEILING = 0.01
_VARIANCE_FLOOR = 1e-14

MODE_ASYMPTOTIC = "AsymptoticSim"
MODE_BOOTSTRAP = "Bootstrap"


@dataclass(frozen=True)
class CriticalValueReport:
    """A critical value plus everything needed to audit how it was computed."""

    value: float
    method: str
    mode: str
    draws: int
    selection: SelectionVector
    alpha: float
    supplementary: dict = field(default_factory=dict)
    correction: float | None = None
    tilt_fallback: bool = False
    skipped_draws: int = 0

    def corrected_value(self) -> float:
        return self.value + (self.correction or 0.0)

    def to_dict(self) -> dict:
        shifts = ["inf" if math.isinf(s) else float(s) for s in self.selection.shifts]
        record = {
            "value": self.value,
            "method": self.method,
            "mode": self.mode,
            "draws": self.draws,
            "alpha": self.alpha,
            "selection": shifts,
            "selection_rule": self.selection.source,
            "skipped_draws": self.skipped_draws,
        }
        if self.supplementary:
            record["supplementary"] = _jsonable(self.supplementary)
        if self.correction is not None:
            record["correction"] = self.correction
        if self.tilt_fallback:
            record["tilt_fallback"] = True
        return record


@dataclass(frozen=True)
class TestDecision:
    """Outcome of one test at one parameter value."""

    statistic: float
    critical_value: CriticalValueReport
    reject: bool
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "critical_value": self.critical_value.to_dict(),
            "reject": self.reject,
            "extras": _jsonable(self.extras),
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return "inf" if math.isinf(v) else v
    return value


def upper_quantile(draws: np.ndarray, level: float) -> float:
    """Order statistic at index ceil(level * m): inf{x : F_hat(x) >= level}."""
    if not 0.0 < level <= 1.0:
        raise DomainError("quantile level must be in (0, 1]")
    draws = np.sort(np.asarray(draws, dtype=float))
    m = draws.size
    if m == 0:
        raise DomainError("cannot take a quantile of zero draws")
    k = min(m, max(1, math.ceil(level * m)))
    return float(draws[k - 1])


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 0.5:
        raise DomainError("alpha must lie in (0, 1/2)")


# ---------------------------------------------------------------------------
# Bootstrap draw bundle
# ---------------------------------------------------------------------------


class BootstrapDraws:
    """Per-replicate resampled summaries, shared across procedures.

    Resampling is encoded as multinomial row counts, so means and second
    moments reduce to two matrix products per batch. Replicates in which some
    column degenerates (zero resampled variance) are flagged and excluded
    from every quantile; their count is reported on the resulting critical
    values.
    """

    def __init__(self, sample: MomentSample, summary: MomentSummary, n_draws: int, rng: np.random.Generator):
        if n_draws < 100:
            raise DomainError("bootstrap needs at least 100 draws")
        x = sample.values
        n, j = x.shape
        counts = _bootstrap_counts(rng, n, n_draws)

        g_star = counts @ x / n
        second = counts @ (x[:, :, None] * x[:, None, :]).reshape(n, j * j) / n
        sigma_star = second.reshape(n_draws, j, j) - g_star[:, :, None] * g_star[:, None, :]
        sigma_star = 0.5 * (sigma_star + np.swapaxes(sigma_star, 1, 2))

        var_star = np.diagonal(sigma_star, axis1=1, axis2=2)
        scale = np.abs(x).max(axis=0) ** 2
        valid = np.all(var_star > _VARIANCE_FLOOR * scale, axis=1)
        skipped = int(n_draws - valid.sum())
        if skipped > _DEGENERATE_CEILING * n_draws:
            raise TooManyDegenerate(skipped, n_draws)

        var_safe = np.where(var_star > 0, var_star, 1.0)
        sd_star = np.sqrt(var_safe)
        inv_sd = 1.0 / sd_star
        omega_star = sigma_star * inv_sd[:, :, None] * inv_sd[:, None, :]

        root_n = math.sqrt(n)
        centered = g_star - summary.mean
        g_recentered_stud = root_n * centered * inv_sd

        self.sample = sample
        self.summary = summary
        self.n_draws = n_draws
        self.valid = valid
        self.skipped = skipped
        self.g_star = g_star
        self.sd_star = sd_star
        self.sigma_star = sigma_star
        self.omega_star = omega_star
        self.g_recentered_stud = g_recentered_stud
        # Per-replicate minimum of the reverse-centered studentized deviations,
        # the pivot behind the first-stage confidence rectangle.
        self.rectangle_min = np.min(-g_recentered_stud, axis=1)
        self._omega_adjusted: np.ndarray | None = None
        self._sigma_adjusted: np.ndarray | None = None

    def _adjusted(self, correlation_scale: bool) -> np.ndarray:
        from .statistics import adjusted_sigma_batch

        if correlation_scale:
            if self._omega_adjusted is None:
                self._omega_adjusted = adjusted_sigma_batch(self.omega_star[self.valid])
            return self._omega_adjusted
        if self._sigma_adjusted is None:
            self._sigma_adjusted = adjusted_sigma_batch(self.sigma_star[self.valid])
        return self._sigma_adjusted

    def selection_quantile(self, selection: SelectionVector, kind: StatisticKind, level: float) -> float:
        draws = self.selection_draws(selection, kind)
        return upper_quantile(draws, level)

    def selection_draws(self, selection: SelectionVector, kind: StatisticKind) -> np.ndarray:
        omit = selection.omitted
        finite = np.where(omit, 0.0, selection.shifts)
        vec = self.g_recentered_stud[self.valid] + finite
        if kind is StatisticKind.AQLR:
            return shifted_statistic_batch(kind, vec, self._adjusted(True), omit, pre_adjusted=True)
        return shifted_statistic_batch(kind, vec, self.omega_star[self.valid], omit)

    def shifted_draws(self, shift: np.ndarray, kind: StatisticKind) -> np.ndarray:
        """Draws of S(sqrt(n)(g* - g + shift), Sigma*), used by the two-step test.

        Evaluated in the scale-invariant form S(G* + sqrt(n) D*^(-1/2) shift,
        Omega*): the statistic's diagonal invariance makes the two identical,
        and the studentized form shares its draws with the selection-based
        procedures, which keeps paired comparisons exact.
        """
        root_n = math.sqrt(self.sample.n)
        vec = self.g_recentered_stud[self.valid] + root_n * shift / self.sd_star[self.valid]
        if kind is StatisticKind.AQLR:
            return shifted_statistic_batch(kind, vec, self._adjusted(True), None, pre_adjusted=True)
        return shifted_statistic_batch(kind, vec, self.omega_star[self.valid], None)


def _bootstrap_counts(rng: np.random.Generator, n: int, n_draws: int) -> np.ndarray:
    indices = rng.integers(0, n, size=(n_draws, n))
    flat = indices + (np.arange(n_draws)[:, None] * n)
    return np.bincount(flat.ravel(), minlength=n_draws * n).reshape(n_draws, n).astype(float)


# ---------------------------------------------------------------------------
# Asymptotic-simulation draws
# ---------------------------------------------------------------------------


def asymptotic_draws(
    correlation: np.ndarray,
    selection: SelectionVector,
    kind: StatisticKind,
    n_draws: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> np.ndarray:
    """Draws of S(Omega^(1/2) Z + shift, Omega) for iid standard normal Z.

    The scale matrix is fixed across draws, so its adjustment happens once;
    evaluation proceeds in chunks to bound memory at large draw counts.
    """
    if n_draws < 100:
        raise DomainError("asymptotic simulation needs at least 100 draws")
    factor = cholesky_factor(correlation)
    omit = selection.omitted
    finite = np.where(omit, 0.0, selection.shifts)
    sigma = correlation
    pre_adjusted = False
    if kind is StatisticKind.AQLR:
        from .statistics import adjusted_sigma

        sigma = adjusted_sigma(correlation)
        pre_adjusted = True

    out = np.empty(n_draws)
    done = 0
    while done < n_draws:
        take = min(chunk, n_draws - done)
        z = rng.standard_normal((take, correlation.shape[0]))
        vec = z @ factor.T + finite
        out[done : done + take] = shifted_statistic_batch(
            kind, vec, sigma, omit, pre_adjusted=pre_adjusted
        )
        done += take
    return out


# ---------------------------------------------------------------------------
# Procedures
# ---------------------------------------------------------------------------


def gms_asymptotic(
    summary: MomentSummary,
    selection: SelectionVector,
    kind: StatisticKind,
    alpha: float,
    n_draws: int,
    seed: int,
    rng: np.random.Generator | None = None,
    method: str = "GMS",
) -> CriticalValueReport:
    """Asymptotic-simulation critical value at a given selection vector."""
    _check_alpha(alpha)
    if rng is None:
        rng = substream(seed, ASYMPTOTIC)
    draws = asymptotic_draws(summary.correlation, selection, kind, n_draws, rng)
    return CriticalValueReport(
        value=upper_quantile(draws, 1.0 - alpha),
        method=method,
        mode=MODE_ASYMPTOTIC,
        draws=n_draws,
        selection=selection,
        alpha=alpha,
    )


def gms_bootstrap(
    sample: MomentSample,
    selection: SelectionVector,
    kind: StatisticKind,
    alpha: float,
    n_draws: int,
    seed: int,
    draws: BootstrapDraws | None = None,
    rng: np.random.Generator | None = None,
    method: str = "GMS",
) -> CriticalValueReport:
    """Bootstrap critical value at a given selection vector."""
    _check_alpha(alpha)
    if draws is None:
        if rng is None:
            rng = substream(seed, BOOTSTRAP)
        draws = BootstrapDraws(sample, summarize(sample), n_draws, rng)
    return CriticalValueReport(
        value=draws.selection_quantile(selection, kind, 1.0 - alpha),
        method=method,
        mode=MODE_BOOTSTRAP,
        draws=draws.n_draws,
        selection=selection,
        alpha=alpha,
        skipped_draws=draws.skipped,
    )


def gms_selection(summary: MomentSummary, schedule: KappaSchedule, phi: int = 1, **phi_params) -> SelectionVector:
    """Selection vector from the raw studentized means."""
    xi = studentized_scaled_mean(summary, kappa_value(schedule, summary.n))
    return phi_k(phi, xi, summary.correlation, **phi_params)


def cms_selection(
    sample: MomentSample,
    summary: MomentSummary,
    schedule: KappaSchedule,
    phi: int = 1,
    fully_constrained: bool = False,
    tilt_result: TiltResult | None = None,
    **phi_params,
):
    """Selection vector from the tilted means; falls back to the raw ones when
    the tilt is infeasible. Returns (selection, fallback_flag, tilt_result)."""
    if tilt_result is None:
        tilt_result = tilt(sample)
    k = kappa_value(schedule, summary.n)
    if not tilt_result.solved:
        sel = gms_selection(summary, schedule, phi, **phi_params)
        return sel, True, tilt_result
    xi = tilted_selection(sample, k, fully_constrained, result=tilt_result, summary=summary)
    omega = summary.correlation
    if fully_constrained:
        var = np.diag(tilt_result.tilted_cov)
        inv_sd = 1.0 / np.sqrt(var)
        omega = tilt_result.tilted_cov * np.outer(inv_sd, inv_sd)
    return phi_k(phi, xi, omega, **phi_params), False, tilt_result


def cms_critical_value(
    sample: MomentSample,
    kind: StatisticKind,
    phi: int,
    schedule: KappaSchedule,
    mode: str,
    alpha: float,
    n_draws: int,
    seed: int,
    fully_constrained: bool = False,
    draws: BootstrapDraws | None = None,
    rng: np.random.Generator | None = None,
    summary: MomentSummary | None = None,
    tilt_result: TiltResult | None = None,
    **phi_params,
) -> CriticalValueReport:
    """Critical value with the selection computed from tilted means."""
    _check_alpha(alpha)
    if summary is None:
        summary = summarize(sample)
    selection, fallback, _ = cms_selection(
        sample, summary, schedule, phi, fully_constrained, tilt_result, **phi_params
    )
    method = "CMS_FC" if fully_constrained else "CMS"
    if mode == MODE_BOOTSTRAP:
        report = gms_bootstrap(
            sample, selection, kind, alpha, n_draws, seed, draws=draws, rng=rng, method=method
        )
    elif mode == MODE_ASYMPTOTIC:
        report = gms_asymptotic(summary, selection, kind, alpha, n_draws, seed, rng=rng, method=method)
    else:
        raise DomainError(f"unknown mode {mode!r}")
    if fallback:
        report = CriticalValueReport(
            value=report.value,
            method=report.method,
            mode=report.mode,
            draws=report.draws,
            selection=report.selection,
            alpha=report.alpha,
            supplementary=report.supplementary,
            correction=report.correction,
            tilt_fallback=True,
            skipped_draws=report.skipped_draws,
        )
    return report


def rsw_test(
    sample: MomentSample,
    kind: StatisticKind,
    alpha: float,
    beta: float | None = None,
    n_draws: int = 10000,
    seed: int = 0,
    draws: BootstrapDraws | None = None,
    rng: np.random.Generator | None = None,
    summary: MomentSummary | None = None,
) -> TestDecision:
    """Two-step test: first-stage lower confidence rectangle, then a shifted
    bootstrap critical value at level 1 - alpha + beta.

    Rejects only when the statistic exceeds the critical value and the
    rectangle sticks out of the nonnegative orthant.
    """
    _check_alpha(alpha)
    if beta is None:
        beta = alpha / 10.0
    if not 0.0 < beta < alpha:
        raise DomainError("beta must lie in (0, alpha)")
    if summary is None:
        summary = summarize(sample)
    if draws is None:
        if rng is None:
            rng = substream(seed, BOOTSTRAP)
        draws = BootstrapDraws(sample, summary, n_draws, rng)

    report, first_stage = rsw_critical_value(draws, summary, kind, alpha, beta)
    statistic = evaluate(kind, summary)
    reject = bool(statistic > report.value and first_stage)
    return TestDecision(
        statistic=statistic,
        critical_value=report,
        reject=reject,
        extras={"first_stage": first_stage},
    )


def rsw_critical_value(
    draws: BootstrapDraws,
    summary: MomentSummary,
    kind: StatisticKind,
    alpha: float,
    beta: float,
):
    """Critical value and first-stage indicator of the two-step test."""
    k_inv = upper_quantile(draws.rectangle_min[draws.valid], beta)
    sd = summary.std
    lower_edge = summary.mean + sd * k_inv / math.sqrt(summary.n)
    lambda_star = np.maximum(lower_edge, 0.0)
    first_stage = bool(np.any(lower_edge < 0.0))
    no_omission = bool(np.all(lambda_star == 0.0))

    t_draws = draws.shifted_draws(lambda_star, kind)
    value = upper_quantile(t_draws, 1.0 - alpha + beta)
    selection = SelectionVector(np.zeros(summary.n_moments), source="rsw")
    report = CriticalValueReport(
        value=value,
        method="RSW",
        mode=MODE_BOOTSTRAP,
        draws=draws.n_draws,
        selection=selection,
        alpha=alpha,
        supplementary={
            "beta": beta,
            "k_inv_beta": k_inv,
            "lambda_star": lambda_star,
            "first_stage": first_stage,
            "no_omission": no_omission,
        },
        skipped_draws=draws.skipped,
    )
    return report, first_stage


# ---------------------------------------------------------------------------
# Refined selection hook (external tuning tables)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RmsTables:
    """Piecewise-linear lookup tables for the data-driven threshold variant.

    ``delta_grid`` indexes both ``kappa_values`` and ``eta1_values``; lookups
    clamp outside the grid. ``eta2_by_j`` maps the number of moments to the
    dimension part of the size correction.
    """

    delta_grid: tuple
    kappa_values: tuple
    eta1_values: tuple
    eta2_by_j: dict

    @classmethod
    def from_json(cls, path) -> "RmsTables":
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
        try:
            return cls(
                delta_grid=tuple(float(x) for x in raw["delta_grid"]),
                kappa_values=tuple(float(x) for x in raw["kappa"]),
                eta1_values=tuple(float(x) for x in raw["eta1"]),
                eta2_by_j={int(k): float(v) for k, v in raw["eta2_by_J"].items()},
            )
        except KeyError as missing:
            raise MissingTable(f"RMS tables are missing key {missing}")

    def __post_init__(self):
        if not (len(self.delta_grid) == len(self.kappa_values) == len(self.eta1_values)):
            raise MissingTable("RMS table arrays must share one grid length")
        if len(self.delta_grid) == 0:
            raise MissingTable("RMS tables are empty")
        if list(self.delta_grid) != sorted(self.delta_grid):
            raise MissingTable("RMS delta grid must be sorted")

    def kappa_at(self, delta: float) -> float:
        return float(np.interp(delta, self.delta_grid, self.kappa_values))

    def eta_at(self, delta: float, j: int) -> float:
        if j not in self.eta2_by_j:
            raise MissingTable(f"RMS eta2 table has no entry for J={j}")
        eta1 = float(np.interp(delta, self.delta_grid, self.eta1_values))
        return eta1 + self.eta2_by_j[j]


def min_off_diagonal(correlation: np.ndarray) -> float:
    j = correlation.shape[0]
    if j == 1:
        return 1.0
    mask = ~np.eye(j, dtype=bool)
    return float(correlation[mask].min())


def rms_hook(
    sample: MomentSample,
    kind: StatisticKind,
    alpha: float,
    tables: RmsTables | None,
    mode: str,
    n_draws: int,
    seed: int,
    phi: int = 1,
    draws: BootstrapDraws | None = None,
    rng: np.random.Generator | None = None,
    summary: MomentSummary | None = None,
) -> CriticalValueReport:
    """Refined-selection critical value: data-driven threshold plus size bump.

    Runs the plain selection pipeline with kappa looked up at the minimum
    off-diagonal correlation and adds the size-correction constant to the
    quantile. Disabled (MissingTable) when no tables are supplied, since the
    numeric tables live outside this package.
    """
    _check_alpha(alpha)
    if tables is None:
        raise MissingTable("RMS needs kappa/eta lookup tables; none were supplied")
    if summary is None:
        summary = summarize(sample)
    delta = min_off_diagonal(summary.correlation)
    kappa_hat = tables.kappa_at(delta)
    if kappa_hat <= 0:
        raise DomainError("RMS kappa table produced a nonpositive threshold")
    eta = tables.eta_at(delta, summary.n_moments)

    schedule = KappaSchedule.parse(f"fixed:{kappa_hat}")
    selection = gms_selection(summary, schedule, phi)
    if mode == MODE_BOOTSTRAP:
        base = gms_bootstrap(
            sample, selection, kind, alpha, n_draws, seed, draws=draws, rng=rng, method="RMS"
        )
    elif mode == MODE_ASYMPTOTIC:
        base = gms_asymptotic(summary, selection, kind, alpha, n_draws, seed, rng=rng, method="RMS")
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return CriticalValueReport(
        value=base.value + eta,
        method="RMS",
        mode=base.mode,
        draws=base.draws,
        selection=base.selection,
        alpha=alpha,
        supplementary={"delta_hat": delta, "kappa_hat": kappa_hat, "eta_hat": eta},
        correction=None,
        skipped_draws=base.skipped_draws,
    )


# ---------------------------------------------------------------------------
# The single decision path
# ---------------------------------------------------------------------------

PROCEDURES = ("gms", "cms", "cms-fc", "rsw", "rms")


def run_test(
    sample: MomentSample,
    kind: StatisticKind,
    procedure: str,
    phi: int = 1,
    schedule: KappaSchedule | None = None,
    mode: str = MODE_BOOTSTRAP,
    alpha: float = 0.05,
    n_draws: int = 10000,
    seed: int = 0,
    beta: float | None = None,
    rms_tables: RmsTables | None = None,
    rng: np.random.Generator | None = None,
    draws: BootstrapDraws | None = None,
    **phi_params,
) -> TestDecision:
    """Evaluate the statistic and one procedure's critical value on a sample.

    This is the decision logic behind both the command line and the Monte
    Carlo harness; those callers only differ in how they construct the sample
    and the random streams.
    """
    if procedure not in PROCEDURES:
        raise DomainError(f"unknown procedure {procedure!r}")
    if schedule is None:
        schedule = KappaSchedule.parse("sqrt-log-n")
    summary = summarize(sample)

    if procedure == "rsw":
        if mode != MODE_BOOTSTRAP:
            raise DomainError("the two-step procedure is bootstrap-only")
        return rsw_test(
            sample, kind, alpha, beta, n_draws, seed, draws=draws, rng=rng, summary=summary
        )

    if mode == MODE_BOOTSTRAP and draws is None:
        if rng is None:
            rng = substream(seed, BOOTSTRAP)
        draws = BootstrapDraws(sample, summary, n_draws, rng)

    extras: dict = {}
    if procedure == "gms":
        selection = gms_selection(summary, schedule, phi, **phi_params)
        if mode == MODE_BOOTSTRAP:
            report = gms_bootstrap(sample, selection, kind, alpha, n_draws, seed, draws=draws)
        else:
            report = gms_asymptotic(summary, selection, kind, alpha, n_draws, seed, rng=rng)
    elif procedure in ("cms", "cms-fc"):
        fully_constrained = procedure == "cms-fc"
        tilt_result = tilt(sample)
        report = cms_critical_value(
            sample,
            kind,
            phi,
            schedule,
            mode,
            alpha,
            n_draws,
            seed,
            fully_constrained=fully_constrained,
            draws=draws,
            rng=rng,
            summary=summary,
            tilt_result=tilt_result,
            **phi_params,
        )
        extras["tilt"] = tilt_result.diagnostics()
    else:  # rms
        report = rms_hook(
            sample,
            kind,
            alpha,
            rms_tables,
            mode,
            n_draws,
            seed,
            phi=phi,
            draws=draws,
            rng=rng,
            summary=summary,
        )

    statistic = evaluate(kind, summary)
    return TestDecision(
        statistic=statistic,
        critical_value=report,
        reject=bool(statistic > report.value),
        extras=extras,
    )
