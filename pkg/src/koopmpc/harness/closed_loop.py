"""Data generation, model fitting and the offset-free MPC closed loop."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..dictionary import build_monomial_dictionary
from ..dynamics import IntegrationDomainError, SampledSystem, sampled_step
from ..edmd import (CoordinateTransform, SnapshotSet, fit_bilinear, fit_edmdc, fit_safedmd,
                    pool_snapshots)
from ..mpc import ControllerState, SolverError, mpc_step
from ..observer import ObserverError, observer_init, observer_record, observer_update
from ..refcalc import OutputMap, ReferenceCalculationError, ReferencePair, solve_reference
from .scenario import FOUR_TANKS_NOMINAL_U, FOUR_TANKS_NOMINAL_X, Scenario

logger = logging.getLogger(__name__)


class ClosedLoopError(RuntimeError):
    """A numerical failure inside the loop; ``step`` is the closed-loop index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class GroundTruth:
    """Adapter exposing a sampled system through the surrogate ``predict`` interface."""

    def __init__(self, system: SampledSystem):
        self.system = system

    def predict(self, x, u):
        return sampled_step(self.system, x, u)


def output_map(scenario: Scenario) -> OutputMap:
    return OutputMap.coordinates(scenario.output_indices)


def target_equilibrium(scenario: Scenario):
    """Reference ``(x, u)`` the model coordinates are centred on.

    Known mode returns the exact ground-truth equilibrium (or the configured
    one); unknown mode returns the approximation.
    """
    eq = scenario.equilibrium
    if eq.mode == "unknown":
        return np.array(eq.approx_x), np.array(eq.approx_u)
    system = scenario.system.build()
    truth = GroundTruth(system)
    box = (np.array(scenario.mpc.u_lo), np.array(scenario.mpc.u_hi))
    if eq.x_ref is not None:
        x, u = np.array(eq.x_ref), np.array(eq.u_ref)
        resid = np.linalg.norm(truth.predict(x, u) - x)
        if resid >= 1e-3:
            logger.warning("configured equilibrium is not a fixed point of the ground truth (residual %.3e)", resid)
        return x, u
    ref = solve_reference(truth, np.zeros(scenario.n), output_map(scenario), eq.y_target, box,
                          (eq.approx_x, eq.approx_u))
    if scenario.system.name == "four_tanks" and not scenario.system.params:
        gap = max(np.max(np.abs(ref.x_ref - FOUR_TANKS_NOMINAL_X)), np.max(np.abs(ref.u_ref - FOUR_TANKS_NOMINAL_U)))
        if gap > 1e-3:
            logger.warning("computed equilibrium differs from the nominal one by %.3e", gap)
    return ref.x_ref, ref.u_ref


def coordinate_transform(scenario: Scenario, equilibrium=None) -> CoordinateTransform:
    x_eq, u_eq = equilibrium if equilibrium is not None else target_equilibrium(scenario)
    return CoordinateTransform.around(x_eq, u_eq, scenario.mpc.u_lo, scenario.mpc.u_hi)


def generate_datasets(scenario: Scenario, transform: CoordinateTransform | None = None):
    """Draw ``m + 1`` snapshot sets under the basis inputs ``0, e_1, ..., e_m``.

    States are uniform on the sampling box; successors come from the ground
    truth. Samples whose integration leaves the field's domain are redrawn.
    Returns ``(datasets, resample_count)``.
    """
    transform = transform or coordinate_transform(scenario)
    system = scenario.system.build()
    rng = np.random.default_rng(scenario.data.seed)
    lo, hi = np.array(scenario.data.box_lo), np.array(scenario.data.box_hi)
    d, n, m = scenario.data.count, scenario.n, scenario.m
    basis = np.vstack([np.zeros(m), np.eye(m)])
    datasets, resamples = [], 0
    for v in basis:
        u = transform.input_from_model(v)
        X = lo[:, None] + (hi - lo)[:, None] * rng.random((n, d))
        Y = np.empty_like(X)
        todo = np.arange(d)
        while todo.size:
            bad = []
            try:
                Y[:, todo] = sampled_step(system, X[:, todo], u)
            except IntegrationDomainError:
                for j in todo:
                    try:
                        Y[:, j] = sampled_step(system, X[:, j], u)
                    except IntegrationDomainError:
                        bad.append(j)
            if bad:
                bad = np.array(bad)
                X[:, bad] = lo[:, None] + (hi - lo)[:, None] * rng.random((n, bad.size))
                resamples += bad.size
            todo = np.array(bad, dtype=int)
        datasets.append(SnapshotSet(X, Y, u))
    if resamples:
        logger.info("resampled %d data points after ground-truth domain errors", resamples)
    return datasets, resamples


def fit_model(scenario: Scenario, datasets=None, transform: CoordinateTransform | None = None):
    transform = transform or coordinate_transform(scenario)
    if datasets is None:
        datasets, _ = generate_datasets(scenario, transform)
    dictionary = build_monomial_dictionary(scenario.n, scenario.model.max_degree)
    ridge = scenario.model.ridge
    kind = scenario.model.kind
    if kind == "bilinear":
        return fit_bilinear(dictionary, datasets, transform, ridge)
    if kind == "safedmd":
        return fit_safedmd(dictionary, datasets, transform, ridge)
    X, U, Y = pool_snapshots(datasets)
    return fit_edmdc(dictionary, X, U, Y, transform, ridge)


def model_cache_key(scenario: Scenario) -> str:
    """Scenarios with equal keys can share one fitted model."""
    s = scenario.to_dict()
    return json.dumps([s["system"], s["data"], s["model"], s["equilibrium"], s["mpc"]["u_lo"],
                       s["mpc"]["u_hi"]], sort_keys=True)


@dataclass
class ClosedLoopTrace:
    name: str
    x: np.ndarray
    u: np.ndarray
    d_hat: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    err_state: np.ndarray
    err_output: np.ndarray
    ocp_iters: np.ndarray
    ocp_stationarity: np.ndarray
    x_final: np.ndarray
    ref_iters: np.ndarray = field(default=None)
    events: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    def columns(self):
        n, m, p = self.x.shape[1], self.u.shape[1], self.d_hat.shape[1]
        return (["k"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
                + [f"dhat_{i + 1}" for i in range(p)] + [f"xref_{i + 1}" for i in range(n)]
                + [f"uref_{i + 1}" for i in range(m)]
                + ["err_state_norm", "err_output_norm", "ocp_iters", "ocp_stationarity"])

    def rows(self):
        for k in range(self.steps):
            vals = np.concatenate([self.x[k], self.u[k], self.d_hat[k], self.x_ref[k], self.u_ref[k],
                                   [self.err_state[k], self.err_output[k]]])
            yield ([str(k)] + [f"{v:.17g}" for v in vals]
                   + [str(int(self.ocp_iters[k])), f"{self.ocp_stationarity[k]:.17g}"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            w.writerows(self.rows())


def run_closed_loop(scenario: Scenario, model=None) -> ClosedLoopTrace:
    """Simulate the receding-horizon loop on the ground truth.

    Per step: measure, update the disturbance estimate, compute the
    reference, solve the OCP, apply the first input. Standard mode skips the
    observer and reference updates and keeps ``d_hat = 0``.
    """
    started = time.perf_counter()
    equilibrium = target_equilibrium(scenario)
    if model is None:
        model = fit_model(scenario, transform=coordinate_transform(scenario, equilibrium))
    system = scenario.system.build()
    spec = scenario.mpc.ocp(scenario.n, scenario.m)
    box = (spec.u_lo, spec.u_hi)
    rmap = output_map(scenario)
    eq = scenario.equilibrium
    y_target = np.array(eq.y_target) if eq.y_target is not None else rmap(equilibrium[0])
    offset_free = scenario.controller.mode == "offset_free"
    lifted = scenario.controller.propagation == "lifted"
    use_refcalc = offset_free and eq.mode == "unknown"

    obs = observer_init(model.size if lifted else scenario.n, lifted, scenario.controller.observer_gain)
    ctrl = ControllerState()
    reference = ReferencePair(*equilibrium)
    T, n, m = scenario.simulation.steps, scenario.n, scenario.m
    rec = {k: [] for k in ("x", "u", "d", "xr", "ur", "es", "eo", "it", "st", "ri")}
    events = []
    clock = 0

    def log(k, what):
        nonlocal clock
        events.append((k, what, clock))
        clock += 1

    x = np.array(scenario.simulation.x0, dtype=float)
    for k in range(T):
        log(k, "measure")
        try:
            if offset_free and k > 0:
                obs = observer_update(obs, model, x)
                log(k, "observer")
            d_hat = obs.d_hat
            ref_iters = 0
            if use_refcalc:
                reference = solve_reference(model, d_hat, rmap, y_target, box, reference, lifted=lifted)
                ref_iters = reference.iterations
                log(k, "reference")
            u, sol, ctrl = mpc_step(ctrl, model, x, d_hat, tuple(reference), spec, lifted)
            log(k, "ocp")
        except (SolverError, ReferenceCalculationError, ObserverError, np.linalg.LinAlgError) as exc:
            raise ClosedLoopError(str(exc), k) from exc
        if not sol.converged:
            logger.debug("step %d: OCP stopped with status %s", k, sol.status)
        rec["x"].append(x)
        rec["u"].append(u)
        rec["d"].append(d_hat.copy())
        rec["xr"].append(np.array(reference.x_ref))
        rec["ur"].append(np.array(reference.u_ref))
        rec["es"].append(np.linalg.norm(x - reference.x_ref))
        rec["eo"].append(np.linalg.norm(rmap(x) - y_target))
        rec["it"].append(sol.iterations)
        rec["st"].append(sol.stationarity)
        rec["ri"].append(ref_iters)
        if offset_free:
            obs = observer_record(obs, model, x, u)
        try:
            x = sampled_step(system, x, u)
        except IntegrationDomainError as exc:
            raise ClosedLoopError(f"ground truth left its domain: {exc}", k) from exc
        log(k, "actuate")
        if not np.all(np.isfinite(x)):
            raise ClosedLoopError("ground-truth state became non-finite", k)

    return ClosedLoopTrace(
        name=scenario.name,
        x=np.array(rec["x"]), u=np.array(rec["u"]).reshape(T, m), d_hat=np.array(rec["d"]),
        x_ref=np.array(rec["xr"]).reshape(T, n), u_ref=np.array(rec["ur"]).reshape(T, m),
        err_state=np.array(rec["es"]), err_output=np.array(rec["eo"]),
        ocp_iters=np.array(rec["it"]), ocp_stationarity=np.array(rec["st"]),
        x_final=x, ref_iters=np.array(rec["ri"]), events=events,
        wall_time=time.perf_counter() - started,
    )
