"""Beta-mixture machinery: EM fitting, robustification, conjugate updating.

A :class:`RobustBetaMixture` is the single prior/posterior object used by
every analysis method: K informative Beta components with weights summing
to one, plus a vague Beta component carrying weight ``omega``.  Updating
with binomial data is closed-form; the component weights are re-weighted by
their marginal likelihoods in log space so large group sizes cannot
underflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import betaln, logsumexp, polygamma, psi

from .data import BinomialSummary
from .errors import EstimationError
from .numerics import beta_cdf, beta_logpdf

__all__ = [
    "BetaComponent",
    "RobustBetaMixture",
    "fit_beta_mixture",
    "robustify",
    "posterior_update",
    "prior_effective_sample_size",
]

_CLAMP = 1e-6
_MIN_WEIGHT = 1e-4


class BetaComponent(NamedTuple):
    weight: float
    a: float
    b: float


@dataclass(frozen=True)
class RobustBetaMixture:
    """Weighted Beta mixture with a designated vague component.

    Density: ``(1 - omega) * sum_k pi_k Beta(a_k, b_k) + omega * Beta(a0, b0)``.
    """

    components: tuple[BetaComponent, ...]
    vague: tuple[float, float]
    omega: float

    def __post_init__(self):
        comps = tuple(BetaComponent(float(w), float(a), float(b)) for w, a, b in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "vague", (float(self.vague[0]), float(self.vague[1])))
        object.__setattr__(self, "omega", float(self.omega))
        if not comps and self.omega < 1.0:
            raise ValueError("a mixture without informative components needs omega = 1")
        total = sum(c.weight for c in comps)
        if comps and abs(total - 1.0) > 1e-12:
            raise ValueError(f"informative weights must sum to 1, got {total}")
        for c in comps:
            if c.weight <= 0 or c.a <= 0 or c.b <= 0:
                raise ValueError(f"invalid component {c}")
        if self.vague[0] <= 0 or self.vague[1] <= 0:
            raise ValueError("vague component shapes must be positive")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")

    def _all_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Weights/shapes of every component, vague last."""
        w = np.array([(1 - self.omega) * c.weight for c in self.components] + [self.omega])
        a = np.array([c.a for c in self.components] + [self.vague[0]])
        b = np.array([c.b for c in self.components] + [self.vague[1]])
        return w, a, b

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w, a, b = self._all_weights()
        out = np.zeros_like(x, dtype=float)
        for wk, ak, bk in zip(w, a, b):
            if wk > 0:
                out += wk * np.exp(beta_logpdf(x, ak, bk))
        return out

    def mean(self) -> float:
        w, a, b = self._all_weights()
        return float(np.sum(w * a / (a + b)))

    def var(self) -> float:
        w, a, b = self._all_weights()
        m_k = a / (a + b)
        v_k = a * b / ((a + b) ** 2 * (a + b + 1))
        m = np.sum(w * m_k)
        return float(np.sum(w * (v_k + m_k**2)) - m**2)

    def sd(self) -> float:
        return float(np.sqrt(self.var()))

    def cdf(self, x: float) -> float:
        w, a, b = self._all_weights()
        return float(sum(wk * beta_cdf(x, ak, bk) for wk, ak, bk in zip(w, a, b) if wk > 0))

    def quantile(self, q: float, tol: float = 1e-10) -> float:
        if not 0.0 < q < 1.0:
            raise ValueError("quantile level must lie strictly inside (0, 1)")
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < q:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sample(self, size: int, gen: np.random.Generator) -> np.ndarray:
        w, a, b = self._all_weights()
        cum = np.cumsum(w)
        cum[-1] = 1.0
        pick = np.searchsorted(cum, gen.random(size), side="right")
        out = np.empty(size)
        for k in range(w.size):
            mask = pick == k
            cnt = int(mask.sum())
            if cnt:
                out[mask] = gen.beta(a[k], b[k], size=cnt)
        return out

    def to_dict(self) -> dict:
        return {
            "components": [{"weight": c.weight, "a": c.a, "b": c.b} for c in self.components],
            "vague": {"a": self.vague[0], "b": self.vague[1]},
            "omega": self.omega,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RobustBetaMixture":
        comps = tuple(
            BetaComponent(c["weight"], c["a"], c["b"]) for c in payload["components"]
        )
        return cls(
            components=comps,
            vague=(payload["vague"]["a"], payload["vague"]["b"]),
            omega=payload["omega"],
        )


def robustify(
    components: Sequence[BetaComponent],
    vague: tuple[float, float] = (1.0, 1.0),
    omega: float = 0.0,
) -> RobustBetaMixture:
    """Attach a vague Beta component at weight ``omega`` to an informative mixture."""
    return RobustBetaMixture(components=tuple(components), vague=vague, omega=omega)


def posterior_update(prior: RobustBetaMixture, data: BinomialSummary) -> RobustBetaMixture:
    """Conjugate update of a robust Beta mixture with binomial data.

    Shapes gain (y, n - y); weights are re-weighted by each component's
    marginal likelihood ratio f_k = B(a_k + y, b_k + n - y) / B(a_k, b_k),
    all in log space.
    """
    y, n = data.y, data.n
    if n == 0:
        return prior
    a0, b0 = prior.vague
    new_vague = (a0 + y, b0 + n - y)
    if not prior.components:
        return RobustBetaMixture(components=(), vague=new_vague, omega=1.0)
    log_f = np.array(
        [betaln(c.a + y, c.b + n - y) - betaln(c.a, c.b) for c in prior.components]
    )
    log_pi = np.log([c.weight for c in prior.components])
    log_post = log_pi + log_f
    log_norm = logsumexp(log_post)
    pi_hat = np.exp(log_post - log_norm)
    pi_hat /= pi_hat.sum()
    new_comps = tuple(
        BetaComponent(float(w), c.a + y, c.b + n - y)
        for w, c in zip(pi_hat, prior.components)
    )
    if prior.omega == 0.0:
        omega_hat = 0.0
    elif prior.omega == 1.0:
        omega_hat = 1.0
    else:
        log_f0 = betaln(a0 + y, b0 + n - y) - betaln(a0, b0)
        log_num = np.log(prior.omega) + log_f0
        log_den = np.logaddexp(np.log1p(-prior.omega) + log_norm, log_num)
        omega_hat = float(np.exp(log_num - log_den))
    return RobustBetaMixture(components=new_comps, vague=new_vague, omega=omega_hat)


def prior_effective_sample_size(m: RobustBetaMixture) -> float:
    """Pseudo-observation count via a moment-matched Beta(a, b); ESS = a + b.

    Returns 0.0 when the mixture is wider than any Beta can be (variance at
    or above mean(1 - mean)).
    """
    mean, var = m.mean(), m.var()
    cap = mean * (1 - mean)
    if var >= cap or var <= 0:
        return 0.0
    return float(cap / var - 1.0)


def _mle_beta_weighted(
    lx_mean: float, l1x_mean: float, a: float, b: float
) -> tuple[float, float]:
    """Weighted Beta MLE given mean log x and mean log(1-x) under the weights.

    Newton iterations on (log a, log b); monotone thanks to backtracking on
    the weighted objective (which is concave in (a, b) up to the digamma
    terms' shape, so halving always finds an ascent step when one exists).
    """

    def obj(a_, b_):
        return (a_ - 1) * lx_mean + (b_ - 1) * l1x_mean - betaln(a_, b_)

    cur = obj(a, b)
    for _ in range(60):
        ga = lx_mean - psi(a) + psi(a + b)
        gb = l1x_mean - psi(b) + psi(a + b)
        # gradient wrt (log a, log b)
        gu, gv = a * ga, b * gb
        if max(abs(gu), abs(gv)) < 1e-11:
            break
        tri_ab = polygamma(1, a + b)
        # Hessian wrt (log a, log b)
        huu = a * ga + a * a * (tri_ab - polygamma(1, a))
        hvv = b * gb + b * b * (tri_ab - polygamma(1, b))
        huv = a * b * tri_ab
        det = huu * hvv - huv * huv
        if det == 0 or not np.isfinite(det):
            du, dv = gu, gv
        else:
            du = -(hvv * gu - huv * gv) / det
            dv = -(huu * gv - huv * gu) / det
            if gu * du + gv * dv <= 0:  # not an ascent direction; fall back
                du, dv = gu, gv
        step = 1.0
        for _ in range(40):
            na = float(np.clip(a * np.exp(step * du), 1e-6, 1e8))
            nb = float(np.clip(b * np.exp(step * dv), 1e-6, 1e8))
            val = obj(na, nb)
            if val >= cur:
                a, b, cur = na, nb, val
                break
            step *= 0.5
        else:
            break
    return a, b


def _moment_init(x: np.ndarray) -> tuple[float, float]:
    m = float(x.mean())
    v = float(x.var())
    m = min(max(m, 1e-4), 1 - 1e-4)
    v = max(min(v, m * (1 - m) * 0.999), 1e-10)
    nu = m * (1 - m) / v - 1
    return max(m * nu, 1e-3), max((1 - m) * nu, 1e-3)


def _kmeans_1d(x: np.ndarray, k: int, iters: int = 50) -> np.ndarray:
    """Cluster labels from quantile-seeded Lloyd iterations on sorted values."""
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    for _ in range(iters):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        new = np.array([x[labels == j].mean() if np.any(labels == j) else centers[j] for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new
    return np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)


def _em_fit(x: np.ndarray, k: int, max_iter: int = 500, tol: float = 1e-8):
    """EM for a K-component Beta mixture; returns (components, loglik).

    Raises EstimationError if a component's weight collapses below 1e-4.
    The log-likelihood is asserted non-decreasing at every iteration.
    """
    n = x.size
    labels = _kmeans_1d(x, k) if k > 1 else np.zeros(n, dtype=int)
    pis, ab = [], []
    for j in range(k):
        grp = x[labels == j]
        if grp.size < 2:
            grp = x
        pis.append(max(grp.size / n, 0.01))
        ab.append(_moment_init(grp))
    pi = np.array(pis)
    pi /= pi.sum()
    a = np.array([p[0] for p in ab])
    b = np.array([p[1] for p in ab])
    lx, l1x = np.log(x), np.log1p(-x)
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_dens = np.stack([(a[j] - 1) * lx + (b[j] - 1) * l1x - betaln(a[j], b[j]) for j in range(k)])
        log_w = np.log(pi)[:, None] + log_dens
        ll_n = logsumexp(log_w, axis=0)
        ll = float(ll_n.sum())
        assert ll >= prev_ll - 1e-9 * (1 + abs(prev_ll)), "EM log-likelihood decreased"
        r = np.exp(log_w - ll_n[None, :])
        pi_new = r.mean(axis=1)
        if np.any(pi_new < _MIN_WEIGHT):
            raise _DegenerateComponent()
        for j in range(k):
            rw = r[j]
            tot = rw.sum()
            a[j], b[j] = _mle_beta_weighted(
                float(rw @ lx / tot), float(rw @ l1x / tot), a[j], b[j]
            )
        pi = pi_new
        if abs(ll - prev_ll) < tol:
            prev_ll = ll
            break
        prev_ll = ll
    comps = tuple(
        BetaComponent(float(pi[j]), float(a[j]), float(b[j])) for j in range(k)
    )
    return comps, prev_ll


class _DegenerateComponent(Exception):
    pass


def fit_beta_mixture(
    samples,
    k_max: int = 3,
    criterion: str = "aic",
) -> tuple[BetaComponent, ...]:
    """Fit a Beta mixture to samples in (0, 1) by EM, selecting K by AIC/BIC.

    Samples landing exactly on 0 or 1 are clamped inward with a warning.  A
    component whose weight collapses is dropped and the fit restarted with
    one fewer component.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise EstimationError("need at least 100 samples to fit a Beta mixture")
    if np.any((x < 0) | (x > 1)):
        raise ValueError("samples must lie in [0, 1]")
    if np.any((x <= 0) | (x >= 1)):
        warnings.warn("samples on the boundary clamped inward", stacklevel=2)
        x = np.clip(x, _CLAMP, 1 - _CLAMP)
    if float(x.var()) < 1e-12:
        raise EstimationError("degenerate (near-constant) samples; no Beta mixture fits")
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    best = None
    for k in range(1, k_max + 1):
        kk = k
        while kk >= 1:
            try:
                comps, ll = _em_fit(x, kk)
                break
            except _DegenerateComponent:
                kk -= 1
        else:
            continue
        n_par = 3 * kk - 1
        score = 2 * n_par - 2 * ll if criterion == "aic" else n_par * np.log(x.size) - 2 * ll
        if best is None or score < best[0] - 1e-9:
            best = (score, comps)
    if best is None:
        raise EstimationError("no Beta mixture could be fitted")
    return best[1]
