"""Baseline borrowing methods sharing the hierarchy and mixture machinery.

Every method consumes one mixed-source subject table and returns a
:class:`MethodResult` holding per-arm robust Beta-mixture priors and
posteriors plus the trial decision, so downstream metrics treat all methods
uniformly.  The treatment arm borrows from the external trial's treatment
group and the real-world cohort; the control arm borrows from the external
control group only, since the cohort has no control subjects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, expit

from .data import Arm, BinomialSummary, SourceLabel, SubjectTable, summarize
from .eqps import (
    DecisionResult,
    EqpsConfig,
    analyze_stratified,
    decide_trial,
)
from .hierarchy import McmcConfig, sample_unstratified_map
from .mixture import (
    BetaComponent,
    RobustBetaMixture,
    fit_beta_mixture,
    posterior_update,
    prior_effective_sample_size,
    robustify,
)
from .numerics import (
    PURPOSE_CHAIN,
    PURPOSE_DECISION,
    RngStream,
    log_binom_coeff,
)

__all__ = [
    "MethodResult",
    "analyze_noborrow",
    "analyze_map",
    "analyze_rmap",
    "analyze_ebrmap",
    "analyze_psmap",
    "analyze_eqps",
    "map_predictive_components",
    "box_predictive_pvalue",
    "METHOD_NAMES",
]

METHOD_NAMES = ("noborrow", "map", "rmap", "ebrmap", "psmap", "eqps")


@dataclass(frozen=True)
class MethodResult:
    """Uniform per-method output: arm posteriors, weights, and the decision."""

    method: str
    prior: dict
    posterior: dict
    omega: dict
    ess_prior: dict
    decision: DecisionResult
    mcmc_passed: bool = True
    details: dict = field(default_factory=dict)

    @property
    def risk_difference(self) -> float:
        return self.posterior[Arm.TREATMENT].mean() - self.posterior[Arm.CONTROL].mean()

    def report(self) -> dict:
        """JSON-able summary of the analysis."""
        out = {
            "method": self.method,
            "prob_superiority": self.decision.prob_superiority,
            "success": self.decision.success,
            "risk_difference": self.risk_difference,
            "mcmc_passed": self.mcmc_passed,
            "arms": {},
        }
        for arm in (Arm.TREATMENT, Arm.CONTROL):
            out["arms"][arm.value] = {
                "omega": self.omega[arm],
                "ess_prior": self.ess_prior[arm],
                "prior": self.prior[arm].to_dict(),
                "posterior": self.posterior[arm].to_dict(),
                "posterior_mean": self.posterior[arm].mean(),
                "posterior_sd": self.posterior[arm].sd(),
            }
        out.update(self.details)
        return out


def _current_summaries(table: SubjectTable) -> dict[Arm, BinomialSummary]:
    out = {}
    for arm in (Arm.TREATMENT, Arm.CONTROL):
        s = summarize(table, source=SourceLabel.CURRENT, arm=arm)
        if s.n == 0:
            raise ValueError(f"current trial data lacks the {arm.value} arm")
        out[arm] = s
    return out


def _histories(table: SubjectTable, arm: Arm) -> list[BinomialSummary]:
    """External summaries usable as exchangeable historical groups for an arm."""
    hist = []
    ext = summarize(table, source=SourceLabel.EXTERNAL, arm=arm)
    if ext.n > 0:
        hist.append(ext)
    if arm is Arm.TREATMENT:
        rwd = summarize(table, source=SourceLabel.REAL_WORLD, arm=Arm.TREATMENT)
        if rwd.n > 0:
            hist.append(rwd)
    return hist


def _assemble(
    method: str,
    priors: dict,
    currents: dict,
    decision_draws: int,
    rng: RngStream,
    threshold: float,
    mcmc_passed: bool = True,
    details: dict | None = None,
) -> MethodResult:
    posteriors = {arm: posterior_update(priors[arm], currents[arm]) for arm in priors}
    decision = decide_trial(
        posteriors[Arm.TREATMENT],
        posteriors[Arm.CONTROL],
        decision_draws,
        rng.substream(0, PURPOSE_DECISION),
        threshold,
    )
    return MethodResult(
        method=method,
        prior=priors,
        posterior=posteriors,
        omega={arm: priors[arm].omega for arm in priors},
        ess_prior={arm: prior_effective_sample_size(priors[arm]) for arm in priors},
        decision=decision,
        mcmc_passed=mcmc_passed,
        details=details or {},
    )


def analyze_noborrow(
    table: SubjectTable,
    *,
    rng: RngStream,
    vague: tuple[float, float] = (1.0, 1.0),
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """Vague-prior conjugate analysis of the current data alone."""
    currents = _current_summaries(table)
    priors = {arm: RobustBetaMixture(components=(), vague=vague, omega=1.0) for arm in currents}
    return _assemble(
        "noborrow", priors, currents, decision_draws, rng, success_threshold
    )


def map_predictive_components(
    histories: list[BinomialSummary],
    tau_scale: float,
    mcmc: McmcConfig,
    rng: RngStream,
    k_max: int = 3,
    criterion: str = "aic",
) -> tuple[tuple[BetaComponent, ...], bool]:
    """Beta-mixture approximation of the meta-analytic predictive distribution.

    Returns the fitted components and whether the chains passed diagnostics.
    """
    draws = sample_unstratified_map(histories, tau_scale, mcmc, rng)
    pred = expit(next(iter(draws.predictive.values())).reshape(-1))
    comps = fit_beta_mixture(pred, k_max=k_max, criterion=criterion)
    return comps, draws.passed


def _map_family_priors(
    table: SubjectTable,
    omega_for_arm,
    *,
    tau_scale: float,
    mcmc: McmcConfig,
    rng: RngStream,
    vague: tuple[float, float],
    k_max: int,
    criterion: str,
) -> tuple[dict, dict, bool]:
    """Build per-arm robust MAP priors; omega_for_arm(arm, components) -> weight."""
    currents = _current_summaries(table)
    priors = {}
    passed = True
    details: dict = {"arms": {}}
    for idx, arm in enumerate((Arm.TREATMENT, Arm.CONTROL)):
        hist = _histories(table, arm)
        if not hist:
            priors[arm] = RobustBetaMixture(components=(), vague=vague, omega=1.0)
            continue
        comps, ok = map_predictive_components(
            hist,
            tau_scale,
            mcmc,
            rng.substream(0, PURPOSE_CHAIN, idx),
            k_max=k_max,
            criterion=criterion,
        )
        passed &= ok
        priors[arm] = robustify(comps, vague=vague, omega=omega_for_arm(arm, comps, currents[arm]))
    return priors, currents, passed


def analyze_map(
    table: SubjectTable,
    *,
    rng: RngStream,
    mcmc: McmcConfig | None = None,
    tau_scale: float = 1.0,
    vague: tuple[float, float] = (1.0, 1.0),
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """Meta-analytic predictive prior with full borrowing (no vague mass)."""
    mcmc = mcmc or McmcConfig.desk()
    priors, currents, passed = _map_family_priors(
        table,
        lambda arm, comps, cur: 0.0,
        tau_scale=tau_scale,
        mcmc=mcmc,
        rng=rng,
        vague=vague,
        k_max=k_max,
        criterion=criterion,
    )
    return _assemble("map", priors, currents, decision_draws, rng, success_threshold, passed)


def analyze_rmap(
    table: SubjectTable,
    *,
    rng: RngStream,
    omega_v: float = 0.2,
    mcmc: McmcConfig | None = None,
    tau_scale: float = 1.0,
    vague: tuple[float, float] = (1.0, 1.0),
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """Robust MAP: the predictive mixture plus a fixed-weight vague component."""
    if not 0.0 <= omega_v <= 1.0:
        raise ValueError("omega_v must lie in [0, 1]")
    mcmc = mcmc or McmcConfig.desk()
    priors, currents, passed = _map_family_priors(
        table,
        lambda arm, comps, cur: omega_v,
        tau_scale=tau_scale,
        mcmc=mcmc,
        rng=rng,
        vague=vague,
        k_max=k_max,
        criterion=criterion,
    )
    return _assemble("rmap", priors, currents, decision_draws, rng, success_threshold, passed)


def box_predictive_pvalue(
    components: tuple[BetaComponent, ...], current: BinomialSummary
) -> float:
    """Two-sided tail probability of the observed count under the mixture's
    beta-binomial prior predictive."""
    y, n = current.y, current.n
    j = np.arange(n + 1)
    pmf = np.zeros(n + 1)
    for c in components:
        log_pmf = (
            log_binom_coeff(n, j)
            + betaln(j + c.a, n - j + c.b)
            - betaln(c.a, c.b)
        )
        pmf += c.weight * np.exp(log_pmf)
    pmf /= pmf.sum()
    lower = float(pmf[: y + 1].sum())
    upper = float(pmf[y:].sum())
    return min(1.0, 2.0 * min(lower, upper))


def ebrmap_step_weight(
    pvalue: float,
    thresholds: tuple[float, ...] = (0.01, 0.05, 0.2),
    weights: tuple[float, ...] = (1.0, 0.8, 0.5, 0.1),
) -> float:
    """Step function mapping the predictive p-value to a vague weight."""
    if len(weights) != len(thresholds) + 1:
        raise ValueError("need one more weight than thresholds")
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be ascending")
    idx = int(np.searchsorted(thresholds, pvalue, side="right"))
    return float(weights[idx])


def analyze_ebrmap(
    table: SubjectTable,
    *,
    rng: RngStream,
    thresholds: tuple[float, ...] = (0.01, 0.05, 0.2),
    step_weights: tuple[float, ...] = (1.0, 0.8, 0.5, 0.1),
    mcmc: McmcConfig | None = None,
    tau_scale: float = 1.0,
    vague: tuple[float, float] = (1.0, 1.0),
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """Robust MAP with the vague weight set by the Box prior-predictive p-value."""
    mcmc = mcmc or McmcConfig.desk()
    pvalues: dict = {}

    def omega_for_arm(arm, comps, cur):
        p = box_predictive_pvalue(comps, cur)
        pvalues[arm.value] = p
        return ebrmap_step_weight(p, thresholds, step_weights)

    priors, currents, passed = _map_family_priors(
        table,
        omega_for_arm,
        tau_scale=tau_scale,
        mcmc=mcmc,
        rng=rng,
        vague=vague,
        k_max=k_max,
        criterion=criterion,
    )
    return _assemble(
        "ebrmap",
        priors,
        currents,
        decision_draws,
        rng,
        success_threshold,
        passed,
        details={"box_pvalues": pvalues},
    )


def _stratified_details(analysis) -> dict:
    strat = analysis.stratified
    rows = []
    if strat is not None:
        for s in range(1, strat.n_strata + 1):
            row = {
                "stratum": s,
                "low": float(strat.boundaries[s - 1]),
                "high": float(strat.boundaries[s]),
                "n_current": strat.count(SourceLabel.CURRENT, s),
                "n_external": strat.count(SourceLabel.EXTERNAL, s),
                "n_rwd": strat.count(SourceLabel.REAL_WORLD, s),
            }
            if analysis.scales_external is not None:
                row["overlap_external"] = float(analysis.scales_external.overlaps[s - 1])
                row["scale_external"] = float(analysis.scales_external.scales[s - 1])
            if analysis.scales_real is not None:
                row["overlap_rwd"] = float(analysis.scales_real.overlaps[s - 1])
                row["scale_rwd"] = float(analysis.scales_real.scales[s - 1])
            for arm in (Arm.TREATMENT, Arm.CONTROL):
                w = analysis.weights[arm]
                if w is not None:
                    row[f"eps_external_{arm.value}"] = float(w.eps_external[s - 1])
                    row[f"w_external_{arm.value}"] = float(w.w_external[s - 1])
                    if arm is Arm.TREATMENT:
                        row["eps_rwd"] = float(w.eps_real[s - 1])
                        row["w_rwd"] = float(w.w_real[s - 1])
            rows.append(row)
    details = {
        "strata": rows,
        "trimmed": {k.value: v for k, v in (strat.trimmed.items() if strat else [])},
        "propensity": analysis.propensity_info,
        "max_rhat": analysis.max_rhat,
        "consistency": {
            arm.value: {
                "omega_eq": analysis.results[arm].omega_eq,
                "omega_hat": analysis.results[arm].omega_hat,
                "p": analysis.results[arm].consistency,
                "p_se": analysis.results[arm].consistency_se,
                "empty_borrow": analysis.results[arm].empty_borrow,
            }
            for arm in (Arm.TREATMENT, Arm.CONTROL)
        },
    }
    return details


def analyze_psmap(
    table: SubjectTable,
    *,
    rng: RngStream,
    n_strata: int = 5,
    mcmc: McmcConfig | None = None,
    vague: tuple[float, float] = (1.0, 1.0),
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """Stratified borrowing with sample-size-only weights and no vague mass."""
    analysis = analyze_stratified(
        table,
        n_strata=n_strata,
        mcmc=mcmc or McmcConfig.desk(),
        cfg=EqpsConfig(vague=vague),
        rng=rng,
        equal_equivalence=True,
        omega_fixed=0.0,
        k_max=k_max,
        criterion=criterion,
        decision_draws=decision_draws,
        success_threshold=success_threshold,
    )
    return _from_stratified("psmap", analysis)


def analyze_eqps(
    table: SubjectTable,
    *,
    rng: RngStream,
    n_strata: int = 5,
    cfg: EqpsConfig | None = None,
    mcmc: McmcConfig | None = None,
    omega_fixed: float | None = None,
    equal_equivalence: bool = False,
    k_max: int = 3,
    criterion: str = "aic",
    decision_draws: int = 100_000,
    success_threshold: float = 0.95,
) -> MethodResult:
    """The equivalence-probability-weighted stratified borrowing analysis."""
    analysis = analyze_stratified(
        table,
        n_strata=n_strata,
        mcmc=mcmc or McmcConfig.desk(),
        cfg=cfg or EqpsConfig(),
        rng=rng,
        equal_equivalence=equal_equivalence,
        omega_fixed=omega_fixed,
        k_max=k_max,
        criterion=criterion,
        decision_draws=decision_draws,
        success_threshold=success_threshold,
    )
    return _from_stratified("eqps", analysis)


def _from_stratified(method: str, analysis) -> MethodResult:
    arms = (Arm.TREATMENT, Arm.CONTROL)
    return MethodResult(
        method=method,
        prior={arm: analysis.results[arm].prior for arm in arms},
        posterior={arm: analysis.results[arm].posterior for arm in arms},
        omega={arm: analysis.results[arm].omega_eq for arm in arms},
        ess_prior={arm: analysis.results[arm].ess_prior for arm in arms},
        decision=analysis.decision,
        mcmc_passed=analysis.mcmc_passed,
        details=_stratified_details(analysis),
    )
