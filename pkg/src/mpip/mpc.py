"""Phase-domain model-predictive control over the learned latent space.

Candidate control weights are mapped to predicted target-channel weights
through the Gaussian conditional mean (cross-covariance against the control
block), and scored with a closed-form quadratic: each weight squared is
weighted by the integral of its squared basis function over the lookahead
interval.  The plan is the box-constrained minimizer, warm-started at the
ensemble-mean control (the reactive solution) and never allowed to score
worse than it.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import basis
from .errors import DomainError, NumericalError
from .filtering import FilterSession, Observation, posterior
from .model import IPModel, PHASE_WRAP, prior_statistics

COUPLING_RIDGE_SCALE = 1e-8
MAX_ITERATIONS = 50


class Objective(str, enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"
    TRACK_REFERENCE = "track_reference"


@dataclass
class CostConfig:
    """Objective, target channel, lookahead horizons, and trade-off weight."""

    objective: Objective
    target_channel: str
    horizon_x: float = 0.25
    horizon_u: float = 0.10
    rho: float = 1.0
    reference: np.ndarray | None = None
    reference_channel: str | None = None

    def __post_init__(self):
        self.objective = Objective(self.objective)
        if not (0.0 < self.horizon_u <= self.horizon_x <= 1.0):
            raise DomainError("need 0 < horizon_u <= horizon_x <= 1")
        if self.rho < 0.0:
            raise DomainError("rho must be nonnegative")
        if self.reference is not None:
            self.reference = np.asarray(self.reference, dtype=float)


@dataclass
class ControlPlan:
    """Optimized control weights plus the reactive baseline they improve on."""

    u_weights: np.ndarray
    reactive_weights: np.ndarray
    cost_achieved: float
    cost_reactive: float
    phase_at_plan: float
    fallback: bool = False


def _conditional_map(mean_x, mean_u, cov_xu, cov_uu,
                     ridge_scale: float = COUPLING_RIDGE_SCALE):
    """Gain and intercept of the conditional mean of x-weights given u-weights.

    Returns (gain, mean_x, mean_u) with gain = cov_xu cov_uu^{-1}.  A zero
    control covariance means the demonstrations carried no control variation;
    the conditional then degenerates to the unconditional mean (zero gain).
    """
    cov_uu = np.atleast_2d(np.asarray(cov_uu, dtype=float))
    cov_xu = np.atleast_2d(np.asarray(cov_xu, dtype=float))
    dim = cov_uu.shape[0]
    trace = float(np.trace(cov_uu))
    if trace <= 0.0:
        gain = np.zeros_like(cov_xu)
        return gain, np.asarray(mean_x, float), np.asarray(mean_u, float)
    ridged = cov_uu + (ridge_scale * trace / dim) * np.eye(dim)
    try:
        gain = np.linalg.solve(ridged.T, cov_xu.T).T
    except np.linalg.LinAlgError:
        raise NumericalError(
            "control weight covariance singular after regularization"
        ) from None
    return gain, np.asarray(mean_x, float), np.asarray(mean_u, float)


def _state_coupling(state_mean, state_cov, model: IPModel, target: str,
                    control: str | None = None,
                    ridge_scale: float = COUPLING_RIDGE_SCALE,
                    coupling_cov=None):
    """Conditional map between blocks of the state statistics.

    ``coupling_cov`` lets the caller take the gain from a different
    covariance (typically the learned prior) than the means.
    """
    control = control or model.control_channel
    sx = model.state_block(target)
    su = model.state_block(control)
    cov = state_cov if coupling_cov is None else coupling_cov
    return _conditional_map(state_mean[sx], state_mean[su],
                            cov[sx, su], cov[su, su], ridge_scale)


def couple_weights(prior, model: IPModel, u_weights, target_channel: str,
                   control_channel: str | None = None,
                   ridge_scale: float = COUPLING_RIDGE_SCALE) -> np.ndarray:
    """Predicted target-channel weights for candidate control weights.

    ``prior`` is a (mean, covariance) pair over the full state, e.g. from
    ``prior_statistics`` or a filter posterior.  The map is affine in the
    control weights.
    """
    mean, cov = prior
    gain, mean_x, mean_u = _state_coupling(mean, cov, model, target_channel,
                                           control_channel, ridge_scale)
    u_weights = np.asarray(u_weights, dtype=float)
    if u_weights.size != mean_u.size:
        raise DomainError("control weight vector has the wrong length")
    return mean_x + gain @ (u_weights - mean_u)


def horizon_psi(model: IPModel, channel: str, phase: float, horizon: float,
                cache: basis.PsiCache | None = None) -> np.ndarray:
    """Squared-basis integrals over [phase, phase + horizon].

    Clamp mode clips the interval at 1; wrap mode carries the remainder
    around to the start of the next cycle.
    """
    if not (0.0 <= phase <= 1.0):
        raise DomainError("phase must lie in [0, 1]")
    if horizon < 0.0:
        raise DomainError("horizon must be nonnegative")
    interval = (cache.interval if cache is not None
                else lambda lo, hi: basis.precompute_psi(model.basis, lo, hi, channel))
    hi = phase + horizon
    if hi <= 1.0:
        return interval(phase, hi)
    if model.phase_mode == PHASE_WRAP:
        # Wrapping more than a full cycle would double-count; cap at one lap.
        return interval(phase, 1.0) + interval(0.0, min(hi - 1.0, phase))
    return interval(phase, 1.0)


def _quadratic_cost(u, gain, mean_x, mean_u, u_hat, psi_x, psi_u, rho,
                    objective: Objective, reference):
    """Cost and gradient of the phase-domain quadratic at control weights u."""
    w_x = mean_x + gain @ (u - mean_u)
    if objective is Objective.TRACK_REFERENCE:
        err = w_x - reference
        first = float(psi_x @ (err * err))
        grad_first = 2.0 * gain.T @ (psi_x * err)
    else:
        first = float(psi_x @ (w_x * w_x))
        grad_first = 2.0 * gain.T @ (psi_x * w_x)
        if objective is Objective.MAXIMIZE:
            first, grad_first = -first, -grad_first
    du = u - u_hat
    second = rho * float(psi_u @ (du * du))
    grad = grad_first + 2.0 * rho * psi_u * du
    return first + second, grad


def cost(u_weights, prior, psi_x, psi_u, config: CostConfig,
         model: IPModel) -> float:
    """Scalar plan cost for candidate control weights under a state prior."""
    mean, cov = prior
    gain, mean_x, mean_u = _state_coupling(mean, cov, model,
                                           config.target_channel)
    u_weights = np.asarray(u_weights, dtype=float)
    reference = config.reference
    if config.objective is Objective.TRACK_REFERENCE:
        if reference is None:
            raise DomainError("track_reference objective needs a reference")
        if reference.size != mean_x.size:
            raise DomainError("reference length does not match target block")
    u_hat = mean_u
    value, _ = _quadratic_cost(u_weights, gain, mean_x, mean_u, u_hat,
                               np.asarray(psi_x, float), np.asarray(psi_u, float),
                               config.rho, config.objective, reference)
    if not np.isfinite(value):
        raise NumericalError("cost is not finite")
    return value


def _solve_box_quadratic(gain, mean_x, mean_u, u_hat, psi_x, psi_u, rho,
                         objective, reference, lower, upper, x0):
    """Box-constrained local minimum of the quadratic cost (SLSQP)."""
    fun = lambda u: _quadratic_cost(u, gain, mean_x, mean_u, u_hat, psi_x,
                                    psi_u, rho, objective, reference)
    result = minimize(fun, x0, jac=True, method="SLSQP",
                      bounds=list(zip(lower, upper)),
                      options={"maxiter": MAX_ITERATIONS, "ftol": 1e-10})
    return np.clip(result.x, lower, upper)


def optimize_plan(ensemble_posterior, model: IPModel, config: CostConfig,
                  warm_start=None,
                  psi_cache: dict[str, basis.PsiCache] | None = None,
                  coupling_cov=None) -> ControlPlan:
    """Plan control weights for the current posterior.

    The current phase is read from the posterior mean.  The coupling gain
    is taken from ``coupling_cov`` when given (the learned prior, in the
    control loop) and from the posterior covariance otherwise.  The
    optimizer starts from the previous plan when given (re-projected into
    the box) and otherwise from the reactive solution; whichever candidate
    scores best is returned, so the plan never exceeds the reactive cost.
    Optimizer failures fall back to the reactive plan with
    ``fallback=True``.
    """
    mean, cov = ensemble_posterior
    control = model.control_channel
    target = config.target_channel
    if target not in model.blocks:
        raise DomainError(f"unknown target channel {target!r}")
    phase = float(np.clip(mean[0], 0.0, 1.0))

    cache_x = (psi_cache or {}).get(target)
    cache_u = (psi_cache or {}).get(control)
    psi_x = horizon_psi(model, target, phase, config.horizon_x, cache_x)
    psi_u = horizon_psi(model, control, phase, config.horizon_u, cache_u)

    gain, mean_x, mean_u = _state_coupling(mean, cov, model, target,
                                           coupling_cov=coupling_cov)
    reference = config.reference
    if config.objective is Objective.TRACK_REFERENCE:
        if reference is None:
            raise DomainError("track_reference objective needs a reference")
        reference = np.asarray(reference, dtype=float)
        if reference.size != mean_x.size:
            raise DomainError("reference length does not match target block")

    su = model.blocks[control]
    lower, upper = model.weight_min[su], model.weight_max[su]
    u_hat = mean_u
    reactive = np.clip(u_hat, lower, upper)

    def score(u):
        value, _ = _quadratic_cost(u, gain, mean_x, mean_u, u_hat, psi_x,
                                   psi_u, config.rho, config.objective,
                                   reference)
        return value

    cost_reactive = score(reactive)
    x0 = reactive if warm_start is None else np.clip(warm_start, lower, upper)

    fallback = False
    try:
        candidate = _solve_box_quadratic(gain, mean_x, mean_u, u_hat, psi_x,
                                         psi_u, config.rho, config.objective,
                                         reference, lower, upper, x0)
        cost_candidate = score(candidate)
        if not np.isfinite(cost_candidate):
            raise NumericalError("optimizer produced a non-finite cost")
    except Exception:
        candidate, cost_candidate, fallback = reactive, cost_reactive, True

    if cost_candidate <= cost_reactive:
        chosen, cost_achieved = candidate, cost_candidate
    else:
        chosen, cost_achieved = reactive, cost_reactive
    return ControlPlan(
        u_weights=chosen,
        reactive_weights=u_hat.copy(),
        cost_achieved=float(cost_achieved),
        cost_reactive=float(cost_reactive),
        phase_at_plan=phase,
        fallback=fallback,
    )


def control_output(plan: ControlPlan, phase: float, model: IPModel) -> float:
    """Instantaneous control value of a plan at the given phase."""
    features = basis.evaluate_basis(phase, model.basis, model.control_channel)
    return float(features @ plan.u_weights)


class MpcSession:
    """Receding-horizon loop: filter step, re-plan, emit one control value."""

    def __init__(self, model: IPModel, config: CostConfig,
                 seed: int | None = 0, rng=None, perturb: bool = True,
                 psi_resolution: int = 1001):
        self.model = model
        self.config = config
        self.filter = FilterSession(model, seed=seed, rng=rng)
        self.perturb = perturb
        self.prev_plan: ControlPlan | None = None
        self._psi: dict[str, basis.PsiCache] = {}
        self._psi_resolution = psi_resolution
        # Coupling gain comes from the demonstration prior; the posterior
        # supplies the means it is applied around.
        self._prior_cov = prior_statistics(model)[1]

    @property
    def completed(self) -> bool:
        return self.filter.completed

    def _cache(self, channel: str) -> basis.PsiCache:
        if channel not in self._psi:
            self._psi[channel] = basis.PsiCache(self.model.basis, channel,
                                                self._psi_resolution)
        return self._psi[channel]

    def mpc_step(self, obs: Observation, dt: float) -> tuple[float, dict]:
        t0 = time.perf_counter()
        self.filter.predict(dt)
        t1 = time.perf_counter()
        self.filter.update(obs, perturb=self.perturb)
        t2 = time.perf_counter()

        stats = posterior(self.filter.ensemble)
        config = self.config
        if (config.objective is Objective.TRACK_REFERENCE
                and config.reference is None):
            if config.reference_channel is None:
                raise DomainError("track_reference needs a reference or a "
                                  "reference channel")
            ref = stats[0][self.model.state_block(config.reference_channel)]
            config = replace(config, reference=ref.copy())

        caches = {config.target_channel: self._cache(config.target_channel),
                  self.model.control_channel: self._cache(self.model.control_channel)}
        warm = self.prev_plan.u_weights if self.prev_plan is not None else None
        plan = optimize_plan(stats, self.model, config, warm_start=warm,
                             psi_cache=caches, coupling_cov=self._prior_cov)
        self.prev_plan = plan
        t3 = time.perf_counter()

        phase = float(np.clip(stats[0][0], 0.0, 1.0))
        u = control_output(plan, phase, self.model)
        diagnostics = {
            "phase": phase,
            "phase_velocity": float(stats[0][1]),
            "u": u,
            "cost_achieved": plan.cost_achieved,
            "cost_reactive": plan.cost_reactive,
            "fallback": plan.fallback,
            "plan": plan,
            "timings_s": {
                "predict": t1 - t0,
                "update": t2 - t1,
                "plan": t3 - t2,
                "total": time.perf_counter() - t0,
            },
        }
        return u, diagnostics
