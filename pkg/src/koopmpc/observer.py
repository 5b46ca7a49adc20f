"""Disturbance observer for offset-free MPC with a measured state.

The estimate is updated with the innovation between the measurement and the
disturbance-corrected one-step prediction::

    x_tilde = F_hat(x_hat_prev, u_prev) + d_hat_prev
    x_hat   = x
    d_hat   = d_hat_prev + gain * (x_hat - x_tilde)

In lifted mode the same recursion runs on ``z = psi(x)`` with the unprojected
surrogate, so ``d_hat`` has one entry per observable (constant slot included).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class ObserverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObserverState:
    d_hat: np.ndarray
    x_hat: np.ndarray | None = None
    u_prev: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    lifted: bool = False
    gain: float = 1.0

    @property
    def dim(self) -> int:
        return self.d_hat.shape[0]


def observer_init(dim: int, lifted: bool = False, gain: float = 1.0) -> ObserverState:
    if not 0 < gain <= 1:
        raise ValueError("observer gain must lie in (0, 1]")
    return ObserverState(d_hat=np.zeros(dim), lifted=lifted, gain=gain)


def _measure(state: ObserverState, model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    meas = model.lift_state(x) if state.lifted else x.copy()
    if meas.shape != state.d_hat.shape:
        raise ValueError(f"measurement has dimension {meas.shape[0]}, observer expects {state.dim}")
    return meas


def observer_record(state: ObserverState, model, x_measured, u_applied) -> ObserverState:
    """Store the measurement and the input applied at the current step."""
    return replace(state, x_hat=_measure(state, model, x_measured),
                   u_prev=np.asarray(u_applied, dtype=float).copy())


def observer_update(state: ObserverState, model, x_measured) -> ObserverState:
    if state.x_hat is None or state.u_prev is None:
        raise ObserverError("observer_update called before a measurement and input were recorded")
    if state.lifted:
        pred = model.predict_lifted(state.x_hat, state.u_prev)
    else:
        pred = model.predict(state.x_hat, state.u_prev)
    x_tilde = pred + state.d_hat
    x_hat = _measure(state, model, x_measured)
    d_hat = state.d_hat + state.gain * (x_hat - x_tilde)
    if not np.all(np.isfinite(d_hat)):
        raise ObserverError("disturbance estimate became non-finite")
    return replace(state, x_hat=x_hat, x_tilde=x_tilde, d_hat=d_hat)
