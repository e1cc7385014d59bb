"""Drives filtering and control over generated trials and collects metrics.

One run processes every sample of every trial through the filter; control
comes from the selected mode (optimizing, reactive, or passive replay).
Per-tick records go to a JSONL log and per-trial metrics are computed on
the exact counterfactual load the world assigns to the emitted control.
Logs contain no wall-clock data, so a run is byte-for-byte reproducible
from its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import synth
from .basis import evaluate_basis
from .errors import DomainError
from .filtering import FilterSession, Observation
from .mpc import CostConfig, MpcSession, Objective
from .model import IPModel

MODES = ("reduce", "increase", "symmetry", "reactive", "passive")

_OBJECTIVES = {
    "reduce": Objective.MINIMIZE,
    "increase": Objective.MAXIMIZE,
    "symmetry": Objective.TRACK_REFERENCE,
}


def cost_config_for_mode(mode: str, model: IPModel, horizon_x: float = 0.25,
                         horizon_u: float = 0.10, rho: float = 1.0,
                         target_channel: str | None = None) -> CostConfig | None:
    """CostConfig for an optimizing mode; None for reactive/passive."""
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode in ("reactive", "passive"):
        return None
    if mode == "symmetry":
        target = target_channel or "ankle_pros"
        reference = "ankle_intact"
        if target not in model.blocks or reference not in model.blocks:
            raise DomainError(
                "symmetry mode needs ankle_pros and ankle_intact channels"
            )
        return CostConfig(objective=Objective.TRACK_REFERENCE,
                          target_channel=target, horizon_x=horizon_x,
                          horizon_u=horizon_u, rho=rho,
                          reference_channel=reference)
    target = target_channel or model.latent_channels[0]
    return CostConfig(objective=_OBJECTIVES[mode], target_channel=target,
                      horizon_x=horizon_x, horizon_u=horizon_u, rho=rho)


@dataclass
class TrialOutcome:
    metrics: metrics_mod.TrialMetrics
    emitted: np.ndarray
    true_force: np.ndarray
    records: list[dict]
    plan_violations: int
    tracking_rmse: float | None = None


def _plan_ok(plan, model: IPModel) -> bool:
    su = model.blocks[model.control_channel]
    in_box = bool(np.all(plan.u_weights >= model.weight_min[su] - 1e-12)
                  and np.all(plan.u_weights <= model.weight_max[su] + 1e-12))
    return in_box and plan.cost_achieved <= plan.cost_reactive + 1e-12


def run_trial(model: IPModel, truth: synth.StrideTruth, mode: str,
              world: synth.WorldConfig, seed, config: CostConfig | None = None,
              trial_id: str = "trial", perturb: bool = True) -> TrialOutcome:
    demo = truth.demo
    observed = model.observed_channels
    dt = 1.0 / model.sample_rate
    n = demo.length

    mpc_session = None
    if mode in ("reduce", "increase", "symmetry"):
        if config is None:
            config = cost_config_for_mode(mode, model)
        mpc_session = MpcSession(model, config, seed=seed, perturb=perturb)
        filt = mpc_session.filter
    else:
        filt = FilterSession(model, seed=seed)

    emitted = np.empty(n)
    records = []
    violations = 0
    for t in range(n):
        obs = Observation(
            channels=tuple(observed),
            values=np.array([demo.channels[c][t] for c in observed]),
            timestamp=t * dt,
        )
        record = {"trial": trial_id, "t": t}
        if mpc_session is not None:
            u, diag = mpc_session.mpc_step(obs, dt)
            if not _plan_ok(diag["plan"], model):
                violations += 1
            record.update(phase=diag["phase"], u=u,
                          cost_achieved=diag["cost_achieved"],
                          cost_reactive=diag["cost_reactive"],
                          fallback=diag["fallback"])
        else:
            filt.predict(dt)
            filt.update(obs, perturb=perturb)
            mean, _ = filt.posterior()
            phase = float(np.clip(mean[0], 0.0, 1.0))
            if mode == "reactive":
                su = model.state_block(model.control_channel)
                u = float(evaluate_basis(phase, model.basis,
                                         model.control_channel) @ mean[su])
            else:  # passive replay of the recorded control
                u = float(truth.control[t])
            record.update(phase=phase, u=u, cost_achieved=None,
                          cost_reactive=None, fallback=False)
        # Posterior-mean load prediction at the current phase, for the log.
        mean, _ = filt.posterior()
        sf = model.state_block(world.force_name)
        record["force_pred"] = float(
            evaluate_basis(record["phase"], model.basis, world.force_name)
            @ mean[sf])
        emitted[t] = u
        records.append(record)

    true_force = synth.counterfactual_force(truth.force, truth.control,
                                            emitted, world)
    trial = metrics_mod.TrialMetrics(trial_id=trial_id)
    trial.impulse[world.force_name] = metrics_mod.impulse(true_force, dt)
    trial.impulse[world.control_name] = metrics_mod.impulse(np.abs(emitted), dt)
    trial.peak[world.force_name] = metrics_mod.peak(true_force)
    trial.peak[world.control_name] = metrics_mod.peak(emitted)
    if truth.landing_index is not None:
        trial.value_at_event[world.force_name] = metrics_mod.value_at_event(
            true_force, truth.landing_index)

    tracking = None
    pros = next((ch for ch in world.channels if ch.name == "ankle_pros"), None)
    if pros is not None:
        pros_series = synth.counterfactual_channel(
            truth.clean_channels["ankle_pros"], truth.control, emitted,
            pros.control_gain)
        intact = truth.clean_channels.get("ankle_intact")
        if intact is not None:
            tracking = float(np.sqrt(np.mean((pros_series - intact) ** 2)))

    return TrialOutcome(metrics=trial, emitted=emitted, true_force=true_force,
                        records=records, plan_violations=violations,
                        tracking_rmse=tracking)


def run_session(model: IPModel, world: synth.WorldConfig, mode: str,
                n_strides: int, seed: int, out_dir=None,
                horizon_x: float = 0.25, horizon_u: float = 0.10,
                rho: float = 1.0, perturb: bool = True) -> dict:
    """Run a whole session in one mode; optionally write log + metrics."""
    target = None if mode == "symmetry" else world.force_name
    config = cost_config_for_mode(mode, model, horizon_x, horizon_u, rho,
                                  target_channel=target)
    outcomes = []
    for i in range(n_strides):
        style = synth.session_style(world, i, n_strides)
        truth = synth.simulate_stride(world, synth.stride_seed(seed, i), style)
        outcome = run_trial(model, truth, mode, world,
                            seed=np.random.SeedSequence(entropy=(seed, i, 1)),
                            config=config, trial_id=f"{mode}_{i:03d}",
                            perturb=perturb)
        outcomes.append(outcome)

    trials = [o.metrics for o in outcomes]
    force_series = np.concatenate([o.true_force for o in outcomes])
    stability = None
    if force_series.size >= 400:
        stability = metrics_mod.lyapunov_exponent(
            force_series, embed_dim=5, delay=10,
            fit_window=max(2, world.samples_per_stride // 2))

    tracking = [o.tracking_rmse for o in outcomes
                if o.tracking_rmse is not None]
    summary = {
        "mode": mode,
        "n_strides": n_strides,
        "seed": seed,
        "horizon_x": horizon_x,
        "horizon_u": horizon_u,
        "rho": rho,
        "plan_violations": int(sum(o.plan_violations for o in outcomes)),
        "stability_exponent": stability,
        "trials": [t.to_dict() for t in trials],
        "aggregate": metrics_mod.aggregate(trials),
    }
    if tracking:
        summary["ankle_tracking_rmse"] = {
            "mean": float(np.mean(tracking)), "std": float(np.std(tracking))}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / f"{mode}_log.jsonl").open("w") as fh:
            for outcome in outcomes:
                for record in outcome.records:
                    fh.write(json.dumps(record) + "\n")
        with (out_dir / f"{mode}_metrics.json").open("w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return summary
