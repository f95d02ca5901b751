"""Moment samples and their first and second moment summaries.

A moment sample is an n-by-J matrix holding the evaluations of J moment
functions at each of n observations, for one fixed parameter value. All
procedures in the package consume these matrices; nothing here evaluates the
moment functions themselves.

Covariances use divisor n throughout, not n-1. Statistical libraries default
to the unbiased divisor, so summaries are computed locally instead of through
`numpy.cov`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvFormatError, DegenerateColumn, NotPositiveDefinite

# Columns whose sample variance falls below this (relative to the squared
# column scale) are treated as degenerate.
_VARIANCE_FLOOR = 1e-14


@dataclass(frozen=True)
class MomentSample:
    """n-by-J matrix of moment-function evaluations at a fixed parameter."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("sample must be a 2-D array of shape (n, J)")
        n, j = values.shape
        if n < 2:
            raise ValueError("sample needs at least 2 observations")
        if j < 1:
            raise ValueError("sample needs at least 1 moment column")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample entries must all be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_moments(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MomentSummary:
    """Mean, covariance (divisor n), variance diagonal and correlation of a sample."""

    mean: np.ndarray
    covariance: np.ndarray
    diag: np.ndarray
    correlation: np.ndarray
    n: int

    @property
    def n_moments(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        """Per-column standard deviations (square roots of the diagonal)."""
        return np.sqrt(np.diag(self.diag))


@dataclass(frozen=True)
class CorrelationFamily:
    """Toeplitz correlation family used by the simulation designs.

    ``kind`` is one of "Neg", "Zero", "Pos" with the first-row correlations
    fixed for J in {2, 4, 10}, or "Custom" with user-supplied ``rho`` of
    length J-1.
    """

    kind: str
    J: int
    rho: tuple = field(default=())

    _BUILTIN = {
        ("Neg", 2): (-0.9,),
        ("Pos", 2): (0.5,),
        ("Neg", 4): (-0.9, 0.7, -0.5),
        ("Pos", 4): (0.9, 0.7, 0.5),
        ("Neg", 10): (-0.9, 0.8, -0.7, 0.6, -0.5, 0.4, -0.3, 0.2, -0.1),
        ("Pos", 10): (0.9, 0.8, 0.7, 0.6, 0.5, 0.5, 0.5, 0.5, 0.5),
    }

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be positive")
        if self.kind == "Zero":
            object.__setattr__(self, "rho", (0.0,) * (self.J - 1))
        elif self.kind == "Custom":
            rho = tuple(float(r) for r in self.rho)
            if len(rho) != self.J - 1:
                raise ValueError("Custom family needs rho of length J-1")
            object.__setattr__(self, "rho", rho)
        elif self.kind in ("Neg", "Pos"):
            key = (self.kind, self.J)
            if key not in self._BUILTIN:
                raise ValueError(f"{self.kind} family is only defined for J in {{2, 4, 10}}")
            object.__setattr__(self, "rho", self._BUILTIN[key])
        else:
            raise ValueError(f"unknown correlation family kind {self.kind!r}")


def summarize(sample: MomentSample) -> MomentSummary:
    """Compute mean, covariance (divisor n), diagonal and correlation.

    Raises DegenerateColumn if any column has zero sample variance, since
    every downstream studentization divides by the column standard deviation.
    """
    x = sample.values
    n = sample.n
    # Reductions run over a canonical row order, so summaries of row-permuted
    # samples are bitwise identical.
    x = x[np.lexsort(x.T[::-1])]
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    var = np.diag(cov).copy()
    scale = np.abs(x).max(axis=0) ** 2
    bad = np.nonzero(var <= _VARIANCE_FLOOR * scale)[0]
    if bad.size:
        raise DegenerateColumn(int(bad[0]))
    inv_sd = 1.0 / np.sqrt(var)
    corr = np.clip(cov * np.outer(inv_sd, inv_sd), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return MomentSummary(
        mean=mean,
        covariance=cov,
        diag=np.diag(var),
        correlation=corr,
        n=n,
    )


def studentized_scaled_mean(summary: MomentSummary, kappa: float) -> np.ndarray:
    """Per-moment slackness statistic: sqrt(n) times the studentized mean, over kappa.

    This is the quantity the selection functions threshold to decide which
    inequalities look slack.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    var = np.diag(summary.diag)
    bad = np.nonzero(var <= 0)[0]
    if bad.size:
        raise DegenerateColumn(int(bad[0]))
    return np.sqrt(summary.n) * summary.mean / np.sqrt(var) / kappa


def make_toeplitz(family: CorrelationFamily) -> np.ndarray:
    """Build the symmetric Toeplitz correlation matrix with first row (1, rho...).

    Raises NotPositiveDefinite if the result fails a Cholesky factorization.
    """
    first_row = np.concatenate(([1.0], np.asarray(family.rho, dtype=float)))
    idx = np.abs(np.subtract.outer(np.arange(family.J), np.arange(family.J)))
    matrix = first_row[idx]
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"Toeplitz matrix for {family.kind}, J={family.J} is not PD")
    return matrix


def cholesky_factor(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, with failure reported as NotPositiveDefinite."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("matrix is not positive definite")


def load_csv(path) -> MomentSample:
    """Read a moment sample from CSV: n rows by J numeric columns.

    An optional single header row is skipped when its cells do not parse as
    numbers. Parse failures report the offending row and column (1-based,
    counting the header).
    """
    rows: list[list[float]] = []
    width: int | None = None
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for lineno, record in enumerate(reader, start=1):
            if not record or all(cell.strip() == "" for cell in record):
                continue
            parsed: list[float] = []
            for colno, cell in enumerate(record, start=1):
                text = cell.strip()
                try:
                    value = float(text)
                except ValueError:
                    if lineno == 1 and not rows:
                        parsed = []
                        break
                    raise CsvFormatError(
                        f"could not parse {text!r} at row {lineno}, column {colno}",
                        row=lineno,
                        column=colno,
                    )
                if not np.isfinite(value):
                    raise CsvFormatError(
                        f"non-finite value at row {lineno}, column {colno}",
                        row=lineno,
                        column=colno,
                    )
                parsed.append(value)
            if not parsed:
                continue
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise CsvFormatError(
                    f"row {lineno} has {len(parsed)} columns, expected {width}",
                    row=lineno,
                )
            rows.append(parsed)
    if width is None or len(rows) < 2:
        raise CsvFormatError("need at least 2 data rows")
    return MomentSample(np.array(rows, dtype=float))
