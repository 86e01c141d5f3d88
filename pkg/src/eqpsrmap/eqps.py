"""Equivalence-probability weighting, vague-weight calibration, decisions.

This module turns per-stratum posterior draws into a composite prior for
the current trial's response rate, calibrates the vague-prior weight by
sweeping a grid and checking a consistency probability against the current
data, and issues the trial decision.  It also hosts the end-to-end
stratified analysis driver shared by the equivalence-weighted method and
its sample-size-weighted reduction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import betaln, expit

from .data import (
    Arm,
    BinomialSummary,
    SourceLabel,
    StratifiedData,
    SubjectTable,
    summarize,
)
from .errors import EmptyBorrowSignal
from .hierarchy import (
    GroupSpec,
    HierarchicalSpec,
    McmcConfig,
    PosteriorDraws,
    StratumModel,
    sample_hierarchy,
)
from .mixture import (
    BetaComponent,
    RobustBetaMixture,
    fit_beta_mixture,
    posterior_update,
    prior_effective_sample_size,
    robustify,
)
from .numerics import PURPOSE_CHAIN, PURPOSE_CONSISTENCY, PURPOSE_DECISION, RngStream, beta_cdf, beta_logpdf
from .propensity import (
    OverlapScales,
    fit_propensity,
    half_normal_scales,
    score,
    stratify,
    stratum_overlaps,
)

__all__ = [
    "EqpsConfig",
    "StratumWeights",
    "EqpsResult",
    "DecisionResult",
    "equivalence_prob",
    "stratum_weights",
    "composite_prior_samples",
    "consistency_p",
    "find_omega_eq",
    "decide_trial",
    "prepare_stratified",
    "finalize_stratified",
    "analyze_stratified",
    "StratifiedAnalysis",
    "StratifiedPrep",
]


@dataclass(frozen=True)
class EqpsConfig:
    """Tuning parameters of the equivalence-weighted analysis.

    ``lam`` is the compatibility threshold that must be met before external
    information is kept; ``delta`` the clinical equivalence margin;
    ``hybrid_stage`` selects whether the consistency check draws from the
    updated posterior (default) or the prior; ``continuity`` controls the
    handling of boundary counts in the Beta(y, n-y) parameterization.
    """

    lam: float = 0.8
    delta: float = 0.1
    omega_step: float = 0.01
    consistency_draws: int = 100_000
    vague: tuple[float, float] = (1.0, 1.0)
    hybrid_stage: str = "posterior"
    continuity: str = "jeffreys"

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lam must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        steps = round(1.0 / self.omega_step)
        if steps < 1 or abs(steps * self.omega_step - 1.0) > 1e-9:
            raise ValueError("omega_step must divide 1 exactly")
        if self.consistency_draws < 1000:
            raise ValueError("consistency_draws must be at least 1,000")
        if self.hybrid_stage not in ("posterior", "prior"):
            raise ValueError("hybrid_stage must be 'posterior' or 'prior'")
        if self.continuity not in ("jeffreys", "strict"):
            raise ValueError("continuity must be 'jeffreys' or 'strict'")

    def omega_grid(self) -> np.ndarray:
        steps = round(1.0 / self.omega_step)
        return np.round(np.linspace(0.0, 1.0, steps + 1), 12)


def _rate_beta_params(summary: BinomialSummary, continuity: str) -> tuple[float, float]:
    """Beta(y, n - y) rate-distribution shapes with boundary handling."""
    y, n = summary.y, summary.n
    if n == 0:
        raise ValueError("cannot form a rate distribution from an empty group")
    if 0 < y < n:
        return float(y), float(n - y)
    if continuity == "strict":
        raise ValueError(f"degenerate rate distribution for y={y}, n={n}")
    warnings.warn(
        f"boundary count y={y}/{n}: continuity correction 0.5 applied",
        stacklevel=3,
    )
    return y + 0.5, (n - y) + 0.5


def equivalence_prob(
    a: BinomialSummary, b: BinomialSummary, continuity: str = "jeffreys"
) -> float:
    """Two-sided tail probability that the two groups share a response rate.

    With p_a ~ Beta(y_a, n_a - y_a) and p_b ~ Beta(y_b, n_b - y_b),
    returns 2 * min(Pr(p_a > p_b), 1 - Pr(p_a > p_b)); 1 means perfectly
    exchangeable rates, 0 means fully separated.
    """
    aa, ab = _rate_beta_params(a, continuity)
    ba, bb = _rate_beta_params(b, continuity)

    def integrand(x):
        return np.exp(beta_logpdf(x, aa, ab)) * beta_cdf(x, ba, bb)

    pr, _ = quad(integrand, 0.0, 1.0, epsabs=1e-9, epsrel=1e-9, limit=200)
    pr = min(max(pr, 0.0), 1.0)
    return 2.0 * min(pr, 1.0 - pr)


@dataclass(frozen=True)
class StratumWeights:
    """Per-stratum equivalence probabilities and borrowing weights for one arm.

    Arrays are indexed by stratum (0-based); NaN marks an absent source.
    ``borrowable`` flags strata contributing any external information, and
    ``current_share`` is that stratum's share of current subjects in the arm.
    """

    arm: Arm
    eps_external: np.ndarray
    eps_real: np.ndarray
    w_external: np.ndarray
    w_real: np.ndarray
    borrowable: np.ndarray
    current_share: np.ndarray

    @property
    def any_borrowable(self) -> bool:
        return bool(self.borrowable.any())


def stratum_weights(
    strat: StratifiedData,
    arm: Arm,
    included: dict[tuple[int, SourceLabel], bool] | None = None,
    continuity: str = "jeffreys",
    equal_equivalence: bool = False,
) -> StratumWeights:
    """Equivalence-probability x sample-size weights per stratum (one arm).

    A source enters a stratum's weight when it has retained subjects there
    (and is not excluded through ``included``).  With both sources present,
    w_real = n_real * eps_real / (n_ex * eps_ex + n_real * eps_real); a lone
    source takes full weight; a stratum with no usable source, or with both
    equivalence probabilities zero, is flagged non-borrowable.
    ``equal_equivalence`` fixes every equivalence probability at 1, leaving
    pure sample-size weighting.
    """
    S = strat.n_strata
    eps_e = np.full(S, np.nan)
    eps_r = np.full(S, np.nan)
    w_e = np.full(S, np.nan)
    w_r = np.full(S, np.nan)
    borrowable = np.zeros(S, dtype=bool)
    for s in range(1, S + 1):
        cur = strat.summary(SourceLabel.CURRENT, arm, s)
        sources: dict[SourceLabel, BinomialSummary] = {}
        for src in (SourceLabel.EXTERNAL, SourceLabel.REAL_WORLD):
            if src is SourceLabel.REAL_WORLD and arm is not Arm.TREATMENT:
                continue
            summ = strat.summary(src, arm if src is SourceLabel.EXTERNAL else Arm.TREATMENT, s)
            if summ.n == 0:
                continue
            if included is not None and not included.get((s, src), False):
                continue
            sources[src] = summ
        if not sources or cur.n == 0:
            continue
        eps = {}
        for src, summ in sources.items():
            eps[src] = 1.0 if equal_equivalence else equivalence_prob(summ, cur, continuity)
        if SourceLabel.EXTERNAL in eps:
            eps_e[s - 1] = eps[SourceLabel.EXTERNAL]
        if SourceLabel.REAL_WORLD in eps:
            eps_r[s - 1] = eps[SourceLabel.REAL_WORLD]
        num_e = sources.get(SourceLabel.EXTERNAL, BinomialSummary(0, 0)).n * eps.get(
            SourceLabel.EXTERNAL, 0.0
        )
        num_r = sources.get(SourceLabel.REAL_WORLD, BinomialSummary(0, 0)).n * eps.get(
            SourceLabel.REAL_WORLD, 0.0
        )
        total = num_e + num_r
        if total <= 0:
            continue
        borrowable[s - 1] = True
        if SourceLabel.EXTERNAL in sources:
            w_e[s - 1] = num_e / total
        if SourceLabel.REAL_WORLD in sources:
            w_r[s - 1] = num_r / total
    return StratumWeights(
        arm=arm,
        eps_external=eps_e,
        eps_real=eps_r,
        w_external=w_e,
        w_real=w_r,
        borrowable=borrowable,
        current_share=strat.current_shares(arm),
    )


def composite_prior_samples(
    draws: PosteriorDraws,
    weights: StratumWeights,
    unit_labels: Sequence[str],
) -> np.ndarray:
    """Current-rate prior draws from the per-stratum posterior draws.

    Per MCMC draw, each borrowable stratum contributes its weighted source
    log-odds; strata are combined with current-share weights (renormalised
    over borrowable strata) and mapped through the inverse logit.
    """
    if len(unit_labels) != weights.current_share.size:
        raise ValueError("one unit label per stratum required")
    if not weights.any_borrowable:
        raise EmptyBorrowSignal("no stratum contributes borrowable information")
    shares = np.where(weights.borrowable, weights.current_share, 0.0)
    shares = shares / shares.sum()
    theta_total = None
    for s_idx, label in enumerate(unit_labels):
        if not weights.borrowable[s_idx]:
            continue
        theta_s = 0.0
        if np.isfinite(weights.w_external[s_idx]):
            theta_s = theta_s + weights.w_external[s_idx] * draws.theta[(label, "external")]
        if np.isfinite(weights.w_real[s_idx]):
            theta_s = theta_s + weights.w_real[s_idx] * draws.theta[(label, "rwd")]
        contrib = shares[s_idx] * theta_s
        theta_total = contrib if theta_total is None else theta_total + contrib
    return expit(theta_total.reshape(-1))


def consistency_p(
    hybrid: RobustBetaMixture,
    current: BinomialSummary,
    delta: float,
    m: int,
    rng: RngStream,
    continuity: str = "jeffreys",
) -> tuple[float, float]:
    """Monte Carlo Pr(|p_current - p_hybrid| < delta) with its standard error."""
    if m < 1000:
        raise ValueError("consistency Monte Carlo size must be at least 1,000")
    if delta >= 1.0:
        return 1.0, 0.0
    gen = rng.generator()
    ca, cb = _rate_beta_params(current, continuity)
    p_hyb = hybrid.sample(m, gen)
    p_cur = gen.beta(ca, cb, size=m)
    hits = np.abs(p_hyb - p_cur) < delta
    p = float(hits.mean())
    return p, float(np.sqrt(max(p * (1 - p), 1e-12) / m))


@dataclass(frozen=True)
class EqpsResult:
    """Outcome of the vague-weight calibration for one arm."""

    omega_eq: float
    consistency: float
    consistency_se: float
    prior: RobustBetaMixture
    posterior: RobustBetaMixture
    omega_hat: float
    sweep_omega: np.ndarray
    sweep_p: np.ndarray
    ess_prior: float
    empty_borrow: bool = False
    diagnostics: dict = field(default_factory=dict)


def _vague_only_result(
    current: BinomialSummary, cfg: EqpsConfig, rng: RngStream
) -> EqpsResult:
    prior = RobustBetaMixture(components=(), vague=cfg.vague, omega=1.0)
    posterior = posterior_update(prior, current)
    p, se = consistency_p(
        posterior, current, cfg.delta, cfg.consistency_draws, rng, cfg.continuity
    )
    return EqpsResult(
        omega_eq=1.0,
        consistency=p,
        consistency_se=se,
        prior=prior,
        posterior=posterior,
        omega_hat=1.0,
        sweep_omega=np.array([1.0]),
        sweep_p=np.array([p]),
        ess_prior=prior_effective_sample_size(prior),
        empty_borrow=True,
    )


def find_omega_eq(
    components: Sequence[BetaComponent],
    vague: tuple[float, float],
    current: BinomialSummary,
    cfg: EqpsConfig,
    rng: RngStream,
    omega_fixed: float | None = None,
) -> EqpsResult:
    """Smallest vague weight whose hybrid posterior stays consistent.

    Sweeps the omega grid in ascending order with common random numbers:
    one set of component draws and one set of current-rate draws serve every
    candidate, so the consistency estimate changes only through the mixture
    weights.  Falls back to omega 1 when no candidate reaches the threshold.
    With ``omega_fixed`` the sweep is skipped and the weight is taken as
    given (used by the fixed-weight reductions).
    """
    components = tuple(components)
    if not components:
        return _vague_only_result(current, cfg, rng)
    m = cfg.consistency_draws
    gen = rng.generator()
    y, n = current.y, current.n
    post_stage = cfg.hybrid_stage == "posterior"

    pi = np.array([c.weight for c in components])
    if post_stage:
        shapes = [(c.a + y, c.b + n - y) for c in components] + [
            (vague[0] + y, vague[1] + n - y)
        ]
        log_f = np.array(
            [betaln(c.a + y, c.b + n - y) - betaln(c.a, c.b) for c in components]
        )
        log_f0 = betaln(vague[0] + y, vague[1] + n - y) - betaln(vague[0], vague[1])
        log_mix = np.log(pi) + log_f
        log_norm = float(np.logaddexp.reduce(log_mix))
        pi_eff = np.exp(log_mix - log_norm)
        pi_eff /= pi_eff.sum()
    else:
        shapes = [(c.a, c.b) for c in components] + [vague]
        log_norm = 0.0
        log_f0 = 0.0
        pi_eff = pi
    comp_draws = np.stack([gen.beta(a, b, size=m) for a, b in shapes])
    u = gen.random(m)
    ca, cb = _rate_beta_params(current, cfg.continuity)
    p_cur = gen.beta(ca, cb, size=m)
    cols = np.arange(m)

    def weight_of(omega: float) -> float:
        """Vague-component weight of the stage distribution at this omega."""
        if omega <= 0.0:
            return 0.0
        if omega >= 1.0:
            return 1.0
        if not post_stage:
            return omega
        log_num = np.log(omega) + log_f0
        log_den = np.logaddexp(np.log1p(-omega) + log_norm, log_num)
        return float(np.exp(log_num - log_den))

    def p_at(omega: float) -> float:
        wv = weight_of(omega)
        w = np.concatenate([(1 - wv) * pi_eff, [wv]])
        cum = np.cumsum(w)
        cum[-1] = 1.0
        pick = np.searchsorted(cum, u, side="right")
        p_hyb = comp_draws[pick, cols]
        return float(np.mean(np.abs(p_hyb - p_cur) < cfg.delta))

    if omega_fixed is not None:
        if not 0.0 <= omega_fixed <= 1.0:
            raise ValueError("omega_fixed must lie in [0, 1]")
        sweep_omega = np.array([omega_fixed])
        sweep_p = np.array([p_at(omega_fixed)])
        selected = float(omega_fixed)
        p_sel = float(sweep_p[0])
    else:
        sweep_omega = cfg.omega_grid()
        sweep_p = np.array([p_at(w) for w in sweep_omega])
        reaching = np.flatnonzero(sweep_p >= cfg.lam)
        if reaching.size:
            selected = float(sweep_omega[reaching[0]])
            p_sel = float(sweep_p[reaching[0]])
        else:
            selected = 1.0
            p_sel = float(sweep_p[-1])
    prior = robustify(components, vague=vague, omega=selected)
    posterior = posterior_update(prior, current)
    se = float(np.sqrt(max(p_sel * (1 - p_sel), 1e-12) / m))
    return EqpsResult(
        omega_eq=selected,
        consistency=p_sel,
        consistency_se=se,
        prior=prior,
        posterior=posterior,
        omega_hat=posterior.omega,
        sweep_omega=sweep_omega,
        sweep_p=sweep_p,
        ess_prior=prior_effective_sample_size(prior),
    )


@dataclass(frozen=True)
class DecisionResult:
    prob_superiority: float
    success: bool
    threshold: float
    draws: int


def decide_trial(
    posterior_treatment: RobustBetaMixture,
    posterior_control: RobustBetaMixture,
    m: int,
    rng: RngStream,
    threshold: float = 0.95,
) -> DecisionResult:
    """Monte Carlo Pr(theta_t > theta_c); success when it exceeds the threshold."""
    gen = rng.generator()
    t = posterior_treatment.sample(m, gen)
    c = posterior_control.sample(m, gen)
    prob = float(np.mean(t > c))
    return DecisionResult(
        prob_superiority=prob, success=prob > threshold, threshold=threshold, draws=m
    )


@dataclass(frozen=True)
class StratifiedAnalysis:
    """Everything produced by one stratified borrowing analysis."""

    stratified: StratifiedData | None
    scales_external: OverlapScales | None
    scales_real: OverlapScales | None
    weights: dict[Arm, StratumWeights | None]
    results: dict[Arm, EqpsResult]
    decision: DecisionResult
    mcmc_passed: bool
    max_rhat: float
    propensity_info: dict


@dataclass(frozen=True)
class StratifiedPrep:
    """Stage-one products of the stratified analysis (nothing depends on
    the compatibility threshold or equivalence margin yet), so several
    (lam, delta) settings can share one MCMC run and mixture fit."""

    stratified: StratifiedData | None
    scales_external: OverlapScales | None
    scales_real: OverlapScales | None
    weights: dict
    components: dict
    currents: dict
    mcmc_passed: bool
    max_rhat: float
    propensity_info: dict


def _arm_units(
    strat: StratifiedData,
    arm: Arm,
    scales_ex: OverlapScales | None,
    scales_real: OverlapScales | None,
) -> tuple[list[StratumModel], dict[tuple[int, SourceLabel], bool], list[str]]:
    units: list[StratumModel] = []
    included: dict[tuple[int, SourceLabel], bool] = {}
    labels: list[str] = []
    for s in range(1, strat.n_strata + 1):
        label = f"{arm.value}/s{s}"
        labels.append(label)
        groups: list[GroupSpec] = []
        scales: list[float] = []
        ext = strat.summary(SourceLabel.EXTERNAL, arm, s)
        if ext.n > 0 and scales_ex is not None and np.isfinite(scales_ex.scales[s - 1]):
            groups.append(GroupSpec("external", ext, tau_index=len(scales)))
            scales.append(float(scales_ex.scales[s - 1]))
            included[(s, SourceLabel.EXTERNAL)] = True
        if arm is Arm.TREATMENT:
            rwd = strat.summary(SourceLabel.REAL_WORLD, Arm.TREATMENT, s)
            if rwd.n > 0 and scales_real is not None and np.isfinite(scales_real.scales[s - 1]):
                groups.append(GroupSpec("rwd", rwd, tau_index=len(scales)))
                scales.append(float(scales_real.scales[s - 1]))
                included[(s, SourceLabel.REAL_WORLD)] = True
        if groups:
            units.append(
                StratumModel(label=label, groups=tuple(groups), tau_scales=tuple(scales))
            )
    return units, included, labels


def prepare_stratified(
    table: SubjectTable,
    *,
    n_strata: int = 5,
    mcmc: McmcConfig | None = None,
    rng: RngStream | None = None,
    equal_equivalence: bool = False,
    continuity: str = "jeffreys",
    k_max: int = 3,
    criterion: str = "aic",
) -> StratifiedPrep:
    """Steps 1-2 plus the composite mixture fit: propensity scoring,
    trimming, stratification, overlap scales, the joint hierarchical MCMC
    run, equivalence weights, and per-arm informative Beta components.

    An arm whose strata carry no borrowable information gets ``None``
    components and will fall back to the vague prior downstream.
    """
    mcmc = mcmc or McmcConfig.desk()
    rng = rng or RngStream(mcmc.seed)

    current_t = summarize(table, source=SourceLabel.CURRENT, arm=Arm.TREATMENT)
    current_c = summarize(table, source=SourceLabel.CURRENT, arm=Arm.CONTROL)
    if current_t.n == 0 or current_c.n == 0:
        raise ValueError("current trial data must include both arms")
    currents = {Arm.TREATMENT: current_t, Arm.CONTROL: current_c}

    has_external = bool(table.source_mask(SourceLabel.EXTERNAL).any())
    has_real = bool(table.source_mask(SourceLabel.REAL_WORLD).any())

    if not has_external and not has_real:
        return StratifiedPrep(
            stratified=None,
            scales_external=None,
            scales_real=None,
            weights={arm: None for arm in Arm},
            components={arm: None for arm in Arm},
            currents=currents,
            mcmc_passed=True,
            max_rhat=1.0,
            propensity_info={"fitted": False},
        )

    model = fit_propensity(table)
    scored = table.with_propensity(score(model, table))
    strat = stratify(scored, n_strata=n_strata)

    scales_ex = (
        half_normal_scales(stratum_overlaps(strat, SourceLabel.EXTERNAL))
        if has_external
        else None
    )
    scales_real = (
        half_normal_scales(stratum_overlaps(strat, SourceLabel.REAL_WORLD))
        if has_real
        else None
    )

    all_units: list[StratumModel] = []
    included: dict[Arm, dict] = {}
    labels: dict[Arm, list[str]] = {}
    for arm in (Arm.TREATMENT, Arm.CONTROL):
        units, inc, labs = _arm_units(strat, arm, scales_ex, scales_real)
        all_units.extend(units)
        included[arm] = inc
        labels[arm] = labs

    draws = None
    mcmc_passed = True
    max_rhat = 1.0
    if all_units:
        draws = sample_hierarchy(
            HierarchicalSpec(units=tuple(all_units)),
            mcmc,
            rng.substream(0, PURPOSE_CHAIN),
        )
        mcmc_passed = draws.passed
        max_rhat = draws.max_rhat

    weights: dict = {}
    components: dict = {}
    for arm in (Arm.TREATMENT, Arm.CONTROL):
        w = stratum_weights(
            strat,
            arm,
            included=included[arm],
            continuity=continuity,
            equal_equivalence=equal_equivalence,
        )
        weights[arm] = w
        if draws is None or not w.any_borrowable:
            components[arm] = None
            continue
        try:
            prior_samples = composite_prior_samples(draws, w, labels[arm])
            components[arm] = fit_beta_mixture(prior_samples, k_max=k_max, criterion=criterion)
        except EmptyBorrowSignal:
            components[arm] = None

    return StratifiedPrep(
        stratified=strat,
        scales_external=scales_ex,
        scales_real=scales_real,
        weights=weights,
        components=components,
        currents=currents,
        mcmc_passed=mcmc_passed,
        max_rhat=max_rhat,
        propensity_info={
            "fitted": True,
            "iterations": model.n_iter_,
            "grad_norm": model.grad_norm_,
            "separation": model.separation_,
            "coef": model.coef_.tolist(),
        },
    )


def finalize_stratified(
    prep: StratifiedPrep,
    cfg: EqpsConfig,
    rng: RngStream,
    omega_fixed: float | None = None,
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> StratifiedAnalysis:
    """Steps 3-4 given stage-one products: vague-weight calibration per arm,
    posterior construction, and the trial decision.

    Reusing one ``prep`` with several configs shares the MCMC run and the
    consistency random numbers, so sweeps over (lam, delta) are coherent.
    """
    results: dict[Arm, EqpsResult] = {}
    for arm in (Arm.TREATMENT, Arm.CONTROL):
        arm_rng = rng.substream(0, PURPOSE_CONSISTENCY, _arm_code(arm))
        comps = prep.components[arm]
        if comps is None:
            results[arm] = _vague_only_result(prep.currents[arm], cfg, arm_rng)
            continue
        results[arm] = find_omega_eq(
            comps,
            cfg.vague,
            prep.currents[arm],
            cfg,
            arm_rng,
            omega_fixed=omega_fixed,
        )
    decision = decide_trial(
        results[Arm.TREATMENT].posterior,
        results[Arm.CONTROL].posterior,
        decision_draws,
        rng.substream(0, PURPOSE_DECISION),
        success_threshold,
    )
    return StratifiedAnalysis(
        stratified=prep.stratified,
        scales_external=prep.scales_external,
        scales_real=prep.scales_real,
        weights=prep.weights,
        results=results,
        decision=decision,
        mcmc_passed=prep.mcmc_passed,
        max_rhat=prep.max_rhat,
        propensity_info=prep.propensity_info,
    )


def analyze_stratified(
    table: SubjectTable,
    *,
    n_strata: int = 5,
    mcmc: McmcConfig | None = None,
    cfg: EqpsConfig | None = None,
    rng: RngStream | None = None,
    equal_equivalence: bool = False,
    omega_fixed: float | None = None,
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> StratifiedAnalysis:
    """Run the full propensity-stratified borrowing analysis on one table.

    ``equal_equivalence`` and ``omega_fixed`` reduce the method to pure
    sample-size stratum weighting and a fixed vague weight respectively.
    """
    mcmc = mcmc or McmcConfig.desk()
    cfg = cfg or EqpsConfig()
    rng = rng or RngStream(mcmc.seed)
    prep = prepare_stratified(
        table,
        n_strata=n_strata,
        mcmc=mcmc,
        rng=rng,
        equal_equivalence=equal_equivalence,
        continuity=cfg.continuity,
        k_max=k_max,
        criterion=criterion,
    )
    return finalize_stratified(
        prep,
        cfg,
        rng,
        omega_fixed=omega_fixed,
        decision_draws=decision_draws,
        success_threshold=success_threshold,
    )


def _arm_code(arm: Arm) -> int:
    return 0 if arm is Arm.TREATMENT else 1
