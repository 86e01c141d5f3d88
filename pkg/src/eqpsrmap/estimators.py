"""Scikit-learn style analyzers wrapping the borrowing methods.

Each analyzer is a ``BaseEstimator``: construct with hyperparameters, call
``fit`` on a mixed-source :class:`~eqpsrmap.data.SubjectTable`, then read
fitted attributes (``posterior_treatment_``, ``prob_superiority_``,
``success_``, ...).  ``get_params``/``set_params`` come from sklearn, so the
analyzers compose with grid-search style tooling and clone cleanly.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .comparators import (
    MethodResult,
    analyze_ebrmap,
    analyze_eqps,
    analyze_map,
    analyze_noborrow,
    analyze_psmap,
    analyze_rmap,
)
from .data import Arm, SubjectTable
from .eqps import EqpsConfig
from .hierarchy import McmcConfig
from .numerics import RngStream

__all__ = [
    "NoBorrowAnalyzer",
    "MapAnalyzer",
    "RobustMapAnalyzer",
    "EBRobustMapAnalyzer",
    "PSMapAnalyzer",
    "EqpsRMapAnalyzer",
    "ANALYZERS",
    "make_analyzer",
]


class _BorrowingAnalyzer(BaseEstimator):
    """Shared fit/report plumbing; subclasses implement ``_analyze``."""

    def _analyze(self, data: SubjectTable, rng: RngStream) -> MethodResult:
        raise NotImplementedError

    def _mcmc(self) -> McmcConfig:
        mcmc = getattr(self, "mcmc", None)
        return mcmc if mcmc is not None else McmcConfig.desk()

    def fit(self, data: SubjectTable, y=None):
        if not isinstance(data, SubjectTable):
            raise TypeError("fit expects a SubjectTable with mixed sources")
        result = self._analyze(data, RngStream(self.seed, self.stream))
        self.result_ = result
        self.posterior_treatment_ = result.posterior[Arm.TREATMENT]
        self.posterior_control_ = result.posterior[Arm.CONTROL]
        self.prior_treatment_ = result.prior[Arm.TREATMENT]
        self.prior_control_ = result.prior[Arm.CONTROL]
        self.omega_treatment_ = result.omega[Arm.TREATMENT]
        self.omega_control_ = result.omega[Arm.CONTROL]
        self.ess_prior_treatment_ = result.ess_prior[Arm.TREATMENT]
        self.ess_prior_control_ = result.ess_prior[Arm.CONTROL]
        self.prob_superiority_ = result.decision.prob_superiority
        self.success_ = result.decision.success
        self.risk_difference_ = result.risk_difference
        self.mcmc_passed_ = result.mcmc_passed
        return self

    def report(self) -> dict:
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before report")
        return self.result_.report()


class NoBorrowAnalyzer(_BorrowingAnalyzer):
    """Current-data-only conjugate analysis under the vague prior."""

    def __init__(
        self,
        vague=(1.0, 1.0),
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        self.vague = vague
        self.decision_draws = decision_draws
        self.success_threshold = success_threshold
        self.seed = seed
        self.stream = stream

    def _analyze(self, data, rng):
        return analyze_noborrow(
            data,
            rng=rng,
            vague=tuple(self.vague),
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


class MapAnalyzer(_BorrowingAnalyzer):
    """Meta-analytic predictive prior with full borrowing."""

    def __init__(
        self,
        tau_scale: float = 1.0,
        mcmc: McmcConfig | None = None,
        vague=(1.0, 1.0),
        k_max: int = 3,
        criterion: str = "aic",
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        self.tau_scale = tau_scale
        self.mcmc = mcmc
        self.vague = vague
        self.k_max = k_max
        self.criterion = criterion
        self.decision_draws = decision_draws
        self.success_threshold = success_threshold
        self.seed = seed
        self.stream = stream

    def _analyze(self, data, rng):
        return analyze_map(
            data,
            rng=rng,
            mcmc=self._mcmc(),
            tau_scale=self.tau_scale,
            vague=tuple(self.vague),
            k_max=self.k_max,
            criterion=self.criterion,
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


class RobustMapAnalyzer(MapAnalyzer):
    """Robust MAP with a fixed vague-prior weight."""

    def __init__(
        self,
        omega_v: float = 0.2,
        tau_scale: float = 1.0,
        mcmc: McmcConfig | None = None,
        vague=(1.0, 1.0),
        k_max: int = 3,
        criterion: str = "aic",
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        super().__init__(
            tau_scale=tau_scale,
            mcmc=mcmc,
            vague=vague,
            k_max=k_max,
            criterion=criterion,
            decision_draws=decision_draws,
            success_threshold=success_threshold,
            seed=seed,
            stream=stream,
        )
        self.omega_v = omega_v

    def _analyze(self, data, rng):
        return analyze_rmap(
            data,
            rng=rng,
            omega_v=self.omega_v,
            mcmc=self._mcmc(),
            tau_scale=self.tau_scale,
            vague=tuple(self.vague),
            k_max=self.k_max,
            criterion=self.criterion,
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


class EBRobustMapAnalyzer(MapAnalyzer):
    """Robust MAP with the vague weight chosen by the predictive p-value."""

    def __init__(
        self,
        thresholds=(0.01, 0.05, 0.2),
        step_weights=(1.0, 0.8, 0.5, 0.1),
        tau_scale: float = 1.0,
        mcmc: McmcConfig | None = None,
        vague=(1.0, 1.0),
        k_max: int = 3,
        criterion: str = "aic",
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        super().__init__(
            tau_scale=tau_scale,
            mcmc=mcmc,
            vague=vague,
            k_max=k_max,
            criterion=criterion,
            decision_draws=decision_draws,
            success_threshold=success_threshold,
            seed=seed,
            stream=stream,
        )
        self.thresholds = thresholds
        self.step_weights = step_weights

    def _analyze(self, data, rng):
        return analyze_ebrmap(
            data,
            rng=rng,
            thresholds=tuple(self.thresholds),
            step_weights=tuple(self.step_weights),
            mcmc=self._mcmc(),
            tau_scale=self.tau_scale,
            vague=tuple(self.vague),
            k_max=self.k_max,
            criterion=self.criterion,
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


class PSMapAnalyzer(_BorrowingAnalyzer):
    """Propensity-stratified MAP: sample-size weights, no vague mass."""

    def __init__(
        self,
        n_strata: int = 5,
        mcmc: McmcConfig | None = None,
        vague=(1.0, 1.0),
        k_max: int = 3,
        criterion: str = "aic",
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        self.n_strata = n_strata
        self.mcmc = mcmc
        self.vague = vague
        self.k_max = k_max
        self.criterion = criterion
        self.decision_draws = decision_draws
        self.success_threshold = success_threshold
        self.seed = seed
        self.stream = stream

    def _analyze(self, data, rng):
        return analyze_psmap(
            data,
            rng=rng,
            n_strata=self.n_strata,
            mcmc=self._mcmc(),
            vague=tuple(self.vague),
            k_max=self.k_max,
            criterion=self.criterion,
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


class EqpsRMapAnalyzer(_BorrowingAnalyzer):
    """Equivalence-probability-weighted, propensity-stratified robust MAP."""

    def __init__(
        self,
        n_strata: int = 5,
        lam: float = 0.8,
        delta: float = 0.1,
        omega_step: float = 0.01,
        consistency_draws: int = 100_000,
        vague=(1.0, 1.0),
        hybrid_stage: str = "posterior",
        continuity: str = "jeffreys",
        omega_fixed: float | None = None,
        equal_equivalence: bool = False,
        mcmc: McmcConfig | None = None,
        k_max: int = 3,
        criterion: str = "aic",
        decision_draws: int = 100_000,
        success_threshold: float = 0.95,
        seed: int = 0,
        stream: int = 0,
    ):
        self.n_strata = n_strata
        self.lam = lam
        self.delta = delta
        self.omega_step = omega_step
        self.consistency_draws = consistency_draws
        self.vague = vague
        self.hybrid_stage = hybrid_stage
        self.continuity = continuity
        self.omega_fixed = omega_fixed
        self.equal_equivalence = equal_equivalence
        self.mcmc = mcmc
        self.k_max = k_max
        self.criterion = criterion
        self.decision_draws = decision_draws
        self.success_threshold = success_threshold
        self.seed = seed
        self.stream = stream

    def _config(self) -> EqpsConfig:
        return EqpsConfig(
            lam=self.lam,
            delta=self.delta,
            omega_step=self.omega_step,
            consistency_draws=self.consistency_draws,
            vague=tuple(self.vague),
            hybrid_stage=self.hybrid_stage,
            continuity=self.continuity,
        )

    def _analyze(self, data, rng):
        return analyze_eqps(
            data,
            rng=rng,
            n_strata=self.n_strata,
            cfg=self._config(),
            mcmc=self._mcmc(),
            omega_fixed=self.omega_fixed,
            equal_equivalence=self.equal_equivalence,
            k_max=self.k_max,
            criterion=self.criterion,
            decision_draws=self.decision_draws,
            success_threshold=self.success_threshold,
        )


ANALYZERS = {
    "noborrow": NoBorrowAnalyzer,
    "map": MapAnalyzer,
    "rmap": RobustMapAnalyzer,
    "ebrmap": EBRobustMapAnalyzer,
    "psmap": PSMapAnalyzer,
    "eqps": EqpsRMapAnalyzer,
}


def make_analyzer(method: str, **params) -> _BorrowingAnalyzer:
    """Instantiate an analyzer by method name, passing through parameters."""
    try:
        cls = ANALYZERS[method]
    except KeyError:
        raise ValueError(
            f"unknown method {method!r}; choose from {sorted(ANALYZERS)}"
        ) from None
    return cls(**params)
