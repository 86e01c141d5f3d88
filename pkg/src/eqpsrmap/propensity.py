"""Source-membership propensity model, trimming, stratification, overlaps.

The propensity score here is the probability that a subject belongs to the
current trial rather than one of the borrowable sources, fitted as a
multinomial logit with the current trial as reference class.  Downstream,
external/real-world subjects outside the current score range are trimmed,
retained subjects are binned into equal-probability strata of the current
scores, and per-stratum score-density overlaps set the half-normal
heterogeneity scales of the hierarchical model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Arm, SourceLabel, StratifiedData, SubjectTable
from .errors import EstimationError
from .numerics import DensityEstimate, kde_interval, trapezoid_integral

__all__ = [
    "PropensityModel",
    "fit_propensity",
    "score",
    "trim",
    "TrimResult",
    "stratify",
    "overlap",
    "stratum_overlaps",
    "half_normal_scales",
    "OverlapScales",
]

# class order for the non-reference logit rows: (Z1, Z2) indicator order
_NONREF_ORDER = (SourceLabel.REAL_WORLD, SourceLabel.EXTERNAL)


class PropensityModel(BaseEstimator):
    """Multinomial logit for source membership, current trial as reference.

    Fitted by Newton iterations on the full likelihood; under separation or
    a singular Hessian the fit restarts with a small ridge on the Hessian
    diagonal and ``separation_`` is flagged.

    Attributes after ``fit``: ``coef_`` with one row per non-reference
    class present (real-world first, then external), each of length
    ``n_features + 1`` with the intercept leading; ``classes_``;
    ``n_iter_``; ``grad_norm_``; ``separation_``.
    """

    def __init__(self, max_iter: int = 100, tol: float = 1e-8, ridge: float = 1e-6):
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge

    def fit(self, X, y):
        """Fit on covariates ``X`` and source labels ``y`` (SourceLabel values)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        labels = np.asarray([SourceLabel(v) if not isinstance(v, SourceLabel) else v for v in y])
        present = [s for s in _NONREF_ORDER if np.any(labels == s)]
        if SourceLabel.CURRENT not in labels or not present:
            raise ValueError("need the current class plus at least one other source")
        design = np.column_stack([np.ones(len(X)), X])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise ValueError("design matrix is rank deficient")
        onehot = np.stack([(labels == s).astype(float) for s in present], axis=1)
        coef, n_iter, gnorm, converged = self._newton(design, onehot, ridge=0.0)
        separation = False
        if not converged:
            separation = True
            warnings.warn(
                "propensity fit did not converge (possible separation); "
                "refitting with ridge-regularised Hessian",
                stacklevel=2,
            )
            coef, n_iter, gnorm, converged = self._newton(design, onehot, ridge=self.ridge)
            if not converged:
                raise EstimationError("propensity model failed to converge even with ridge")
        self.classes_ = tuple([SourceLabel.CURRENT] + present)
        self.coef_ = coef
        self.n_iter_ = n_iter
        self.grad_norm_ = gnorm
        self.separation_ = separation
        return self

    def _newton(self, design, onehot, ridge):
        n, p = design.shape
        m = onehot.shape[1]
        beta = np.zeros((m, p))
        gnorm = np.inf
        for it in range(1, self.max_iter + 1):
            eta = design @ beta.T  # (n, m)
            log_den = np.logaddexp.reduce(
                np.column_stack([np.zeros(n), eta]), axis=1
            )
            prob = np.exp(eta - log_den[:, None])  # (n, m), non-reference classes
            grad = design.T @ (onehot - prob)  # (p, m)
            gnorm = float(np.max(np.abs(grad)))
            if gnorm < self.tol:
                return beta, it, gnorm, True
            # block Hessian: H[(j,k)] = -X^T diag(p_j (1{j=k} - p_k)) X
            H = np.empty((m * p, m * p))
            for j in range(m):
                for k in range(m):
                    w = prob[:, j] * ((1.0 if j == k else 0.0) - prob[:, k])
                    H[j * p : (j + 1) * p, k * p : (k + 1) * p] = design.T @ (w[:, None] * design)
            H *= -1
            if ridge:
                H -= ridge * np.eye(m * p)
            try:
                step = np.linalg.solve(H, -grad.T.reshape(-1))
            except np.linalg.LinAlgError:
                return beta, it, gnorm, False
            beta = beta + step.reshape(m, p)
            if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e3:
                return beta, it, gnorm, False
        return beta, self.max_iter, gnorm, gnorm < self.tol

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities in ``classes_`` order (current first)."""
        if not hasattr(self, "coef_"):
            raise NotFittedError("propensity model is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.coef_.shape[1] - 1:
            raise ValueError("covariate dimension mismatch")
        design = np.column_stack([np.ones(len(X)), X])
        eta = design @ self.coef_.T
        full = np.column_stack([np.zeros(len(X)), eta])
        full -= full.max(axis=1, keepdims=True)
        ex = np.exp(full)
        return ex / ex.sum(axis=1, keepdims=True)


def fit_propensity(table: SubjectTable, **kwargs) -> PropensityModel:
    """Fit the source-membership model on every subject in the table."""
    labels = [SourceLabel.CURRENT] * len(table)
    for src in (SourceLabel.EXTERNAL, SourceLabel.REAL_WORLD):
        for i in np.flatnonzero(table.source_mask(src)):
            labels[i] = src
    return PropensityModel(**kwargs).fit(table.covariates, labels)


def score(model: PropensityModel, table: SubjectTable) -> np.ndarray:
    """Per-subject probability of current-trial membership, in (0, 1)."""
    return model.predict_proba(table.covariates)[:, 0]


@dataclass(frozen=True)
class TrimResult:
    low: float
    high: float
    keep_external: np.ndarray
    keep_real: np.ndarray
    n_trimmed: dict

    @property
    def all_external_trimmed(self) -> bool:
        return self.keep_external.size > 0 and not self.keep_external.any()


def trim(e_current: np.ndarray, e_real: np.ndarray, e_external: np.ndarray) -> TrimResult:
    """Drop real-world/external scores outside the current score range.

    Current scores are never trimmed; they define the retention interval.
    """
    e_current = np.asarray(e_current, dtype=float)
    if e_current.size == 0:
        raise ValueError("no current-trial scores to define the trimming boundary")
    lo, hi = float(e_current.min()), float(e_current.max())
    e_real = np.asarray(e_real, dtype=float)
    e_external = np.asarray(e_external, dtype=float)
    keep_r = (e_real >= lo) & (e_real <= hi)
    keep_e = (e_external >= lo) & (e_external <= hi)
    return TrimResult(
        low=lo,
        high=hi,
        keep_external=keep_e,
        keep_real=keep_r,
        n_trimmed={
            SourceLabel.EXTERNAL: int((~keep_e).sum()),
            SourceLabel.REAL_WORLD: int((~keep_r).sum()),
        },
    )


def stratify(table: SubjectTable, n_strata: int = 5) -> StratifiedData:
    """Trim and bin a scored table into equal-probability strata.

    Boundaries are quantiles of the current-trial scores, with the outer
    boundaries at the current minimum/maximum.  Intervals are left-closed
    and right-open except the last, which is closed; a score landing on an
    internal boundary therefore joins the right-hand stratum.
    """
    if table.propensity is None:
        raise ValueError("table must be scored before stratification")
    if n_strata < 1:
        raise ValueError("need at least one stratum")
    e1 = table.propensity[table.source_mask(SourceLabel.CURRENT)]
    if e1.size < n_strata:
        raise ValueError("fewer current subjects than strata")
    tr = trim(
        e1,
        table.propensity[table.source_mask(SourceLabel.REAL_WORLD)],
        table.propensity[table.source_mask(SourceLabel.EXTERNAL)],
    )
    boundaries = np.quantile(e1, np.linspace(0, 1, n_strata + 1))
    boundaries[0], boundaries[-1] = tr.low, tr.high
    if not np.all(np.diff(boundaries) > 0):
        raise ValueError(
            "degenerate stratum boundaries (tied quantiles); reduce n_strata"
        )
    stratum = np.full(len(table), -1, dtype=np.int64)

    def assign(mask, keep=None):
        idx = np.flatnonzero(mask)
        if keep is not None:
            idx = idx[keep]
        s = np.searchsorted(boundaries[1:-1], table.propensity[idx], side="right") + 1
        stratum[idx] = s

    assign(table.source_mask(SourceLabel.CURRENT))
    assign(table.source_mask(SourceLabel.EXTERNAL), tr.keep_external)
    assign(table.source_mask(SourceLabel.REAL_WORLD), tr.keep_real)
    return StratifiedData(
        table=table.with_stratum(stratum),
        boundaries=boundaries,
        trimmed=tr.n_trimmed,
    )


def overlap(f: DensityEstimate, g: DensityEstimate) -> float:
    """Overlap coefficient: integral of min(f, g) by the trapezoidal rule.

    Densities on different grids are linearly resampled onto the merged
    grid, with zero density outside each original support.
    """
    if f.grid.shape == g.grid.shape and np.allclose(f.grid, g.grid):
        grid = f.grid
        fv, gv = f.density, g.density
    else:
        grid = np.union1d(f.grid, g.grid)
        fv = np.interp(grid, f.grid, f.density, left=0.0, right=0.0)
        gv = np.interp(grid, g.grid, g.density, left=0.0, right=0.0)
    return float(np.trapezoid(np.minimum(fv, gv), grid))


def stratum_overlaps(
    strat: StratifiedData,
    source: SourceLabel,
    grid_size: int = 256,
    min_samples: int = 10,
) -> np.ndarray:
    """Per-stratum overlap between a source's score density and the current one.

    Densities are estimated on the stratum's own score interval with
    boundary reflection.  Strata where the source has fewer than
    ``min_samples`` retained subjects get overlap 0 (treated as carrying no
    usable similarity information).
    """
    out = np.zeros(strat.n_strata)
    for s in range(1, strat.n_strata + 1):
        lo, hi = strat.boundaries[s - 1], strat.boundaries[s]
        cur = strat.scores(SourceLabel.CURRENT, s)
        src = strat.scores(source, s)
        if src.size < min_samples or cur.size < min_samples:
            continue
        try:
            f_cur = kde_interval(cur, lo, hi, grid_size)
            f_src = kde_interval(src, lo, hi, grid_size)
        except EstimationError:
            continue
        out[s - 1] = overlap(f_src, f_cur)
    return out


@dataclass(frozen=True)
class OverlapScales:
    """Half-normal heterogeneity scales derived from stratum overlaps.

    ``scales[s] * overlaps[s] == reference`` wherever the overlap is
    positive; zero-overlap strata get an infinite scale, meaning that
    source is excluded from the stratum's hierarchical model.
    """

    overlaps: np.ndarray
    reference: float
    scales: np.ndarray

    def included(self) -> np.ndarray:
        return np.isfinite(self.scales)


def half_normal_scales(overlaps) -> OverlapScales:
    """Scales k_s = r_ref / r_s with r_ref the median positive overlap."""
    r = np.asarray(overlaps, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("need a non-empty overlap vector")
    if np.any((r < 0) | (r > 1)):
        raise ValueError("overlaps must lie in [0, 1]")
    positive = r[r > 0]
    if positive.size == 0:
        return OverlapScales(overlaps=r, reference=0.0, scales=np.full(r.size, np.inf))
    ref = float(np.median(positive))
    with np.errstate(divide="ignore"):
        scales = np.where(r > 0, ref / r, np.inf)
    return OverlapScales(overlaps=r, reference=ref, scales=scales)
