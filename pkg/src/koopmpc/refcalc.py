"""Steady-state target calculation for the disturbance-corrected surrogate.

Finds ``(x_ref, u_ref)`` with

    x_ref = F_hat(x_ref, u_ref) + d_hat,   r(x_ref) = y_target,   u_ref in U.

With as many controlled outputs as inputs this is a square nonlinear system
solved by damped Newton iteration. Otherwise a steady-state cost is minimised
subject to the same equations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

FD_STEP = 1e-7
MIN_DAMPING = 2.0**-20


class ReferenceCalculationError(RuntimeError):
    """Raised when no admissible steady-state target is found."""


@dataclass(frozen=True)
class OutputMap:
    """Controlled output ``y_c = r(x)``."""

    fn: Callable[[np.ndarray], np.ndarray]
    p: int

    @classmethod
    def coordinates(cls, indices) -> "OutputMap":
        idx = np.asarray(indices, dtype=int)
        return cls(lambda x: np.asarray(x, dtype=float)[idx], len(idx))

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(-1)


@dataclass(frozen=True)
class ReferencePair:
    x_ref: np.ndarray
    u_ref: np.ndarray
    residual_fixed_point: float = 0.0
    residual_output: float = 0.0
    iterations: int = 0

    def __iter__(self):
        yield self.x_ref
        yield self.u_ref


def corrected_prediction(model, x, u, d_hat, lifted: bool = False) -> np.ndarray:
    """One step of ``F_hat + d_hat`` in physical units.

    In lifted mode the disturbance enters before projection.
    """
    if not lifted:
        return model.predict(x, u) + d_hat
    z = model.predict_lifted(model.lift_state(x), u) + d_hat
    return model.transform.state_from_model(model.dictionary.project(z))


def _fd_jacobian(fun, w: np.ndarray, rel_step: float = FD_STEP) -> np.ndarray:
    f0 = fun(w)
    J = np.empty((f0.shape[0], w.shape[0]))
    for j in range(w.shape[0]):
        h = rel_step * max(1.0, abs(w[j]))
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        J[:, j] = (fun(wp) - fun(wm)) / (2 * h)
    return J


def solve_reference(model, d_hat, output_map: OutputMap, y_target, input_box,
                    initial_guess, steady_cost=None, lifted: bool = False,
                    tol: float = 1e-10, max_iters: int = 50) -> ReferencePair:
    """Disturbance-consistent steady-state target.

    ``model`` only needs a ``predict(x, u)`` method (plus ``lift_state`` and
    ``predict_lifted`` in lifted mode), so the ground truth can be passed to
    compute exact equilibria. ``initial_guess`` is a ``ReferencePair`` or an
    ``(x, u)`` tuple.
    """
    x0, u0 = (np.asarray(a, dtype=float).reshape(-1) for a in initial_guess)
    n, m = x0.shape[0], u0.shape[0]
    y_target = np.asarray(y_target, dtype=float).reshape(-1)
    lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in input_box)
    d_hat = np.asarray(d_hat, dtype=float)
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(u0))):
        raise ValueError("initial guess must be finite")

    def residual(w):
        x, u = w[:n], w[n:]
        return np.concatenate([x - corrected_prediction(model, x, u, d_hat, lifted),
                               output_map(x) - y_target])

    w = np.concatenate([x0, u0])
    if output_map.p == m:
        w, iters = _newton(residual, w, tol, max_iters)
    else:
        w, iters = _constrained(residual, w, n, lo, hi, steady_cost, tol)

    F = residual(w)
    x_ref, u_ref = w[:n], w[n:]
    if np.any(u_ref < lo) or np.any(u_ref > hi):
        raise ReferenceCalculationError(f"steady-state input {u_ref} lies outside the input box")
    return ReferencePair(x_ref, u_ref, float(np.linalg.norm(F[:n])), float(np.linalg.norm(F[n:])), iters)


def _newton(residual, w, tol, max_iters):
    F = residual(w)
    norm = np.linalg.norm(F)
    for it in range(max_iters):
        if norm <= tol:
            return w, it
        J = _fd_jacobian(residual, w)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise ReferenceCalculationError(f"singular Jacobian at Newton iterate {it}")
        step = np.linalg.solve(J, -F)
        alpha = 1.0
        while alpha >= MIN_DAMPING:
            w_try = w + alpha * step
            F_try = residual(w_try)
            n_try = np.linalg.norm(F_try)
            if np.isfinite(n_try) and n_try < norm:
                break
            alpha *= 0.5
        else:
            raise ReferenceCalculationError(f"Newton line search stalled at residual {norm:.3e}")
        w, F, norm = w_try, F_try, n_try
    if norm <= tol:
        return w, max_iters
    raise ReferenceCalculationError(f"Newton did not converge in {max_iters} iterations (residual {norm:.3e})")


def _constrained(residual, w0, n, lo, hi, steady_cost, tol):
    """Minimise the steady-state cost subject to the equilibrium and output equations."""
    if steady_cost is None:
        anchor = w0.copy()

        def steady_cost(x, u):
            return float(np.sum((np.concatenate([x, u]) - anchor) ** 2))

    bounds = [(None, None)] * n + list(zip(lo, hi))
    res = minimize(lambda w: steady_cost(w[:n], w[n:]), w0, method="SLSQP", bounds=bounds,
                   constraints=[{"type": "eq", "fun": residual}],
                   options={"ftol": 1e-14, "maxiter": 500})
    F = residual(res.x)
    if np.linalg.norm(F) > max(tol, 1e-8):
        raise ReferenceCalculationError(f"steady-state optimisation failed: {res.message}")
    logger.debug("reference optimisation finished after %d iterations", res.nit)
    return res.x, int(res.nit)
