"""Single-shooting MPC over a disturbance-corrected Koopman surrogate.

The optimal control problem

    min_u  sum_{i=0}^{N-1} ||x_i - x_ref||_Q^2 + ||u_i - u_ref||_R^2
    s.t.   x_{i+1} = F_hat(x_i, u_i) + d_hat,   u_i in [u_lo, u_hi]

is reduced to the inputs only and solved by projected Gauss-Newton: each
iteration linearises the rollout (forward sensitivities), solves the
box-constrained linear least-squares subproblem exactly, and backtracks on the
true cost. The cost gradient used for the stationarity test comes from an
adjoint sweep.

In lifted mode the rollout runs on ``z = psi(x)`` with ``z+ = K_u z + d_hat``
and the cost is evaluated on the coordinate observables.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

ARMIJO = 1e-4
MIN_STEP = 2.0**-30
ROUNDOFF = 64 * np.finfo(float).eps


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def _sqrt_psd(W: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L.T @ L == W`` for symmetric positive semidefinite ``W``."""
    w, V = np.linalg.eigh(W)
    return np.sqrt(np.clip(w, 0, None))[:, None] * V.T


@dataclass(frozen=True)
class OcpSpec:
    N: int
    Q: np.ndarray
    R: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    tol: float = 1e-8
    max_iters: int = 500

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        lo = np.asarray(self.u_lo, dtype=float).reshape(-1)
        hi = np.asarray(self.u_hi, dtype=float).reshape(-1)
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")
        if lo.shape != hi.shape or lo.shape[0] != R.shape[0] or np.any(lo > hi):
            raise ValueError("input box must satisfy u_lo <= u_hi with one bound per input")
        for name, val in (("Q", Q), ("R", R), ("u_lo", lo), ("u_hi", hi)):
            object.__setattr__(self, name, val)

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass
class OcpSolution:
    u_seq: np.ndarray  # (m, N)
    x_seq: np.ndarray  # (n, N+1), physical units
    cost: float
    iterations: int
    stationarity: float
    converged: bool
    status: str = "converged"


class ShootingProblem:
    """Single-shooting reduction of the OCP for one measured state.

    Decision variables are the physical inputs ``u`` shaped ``(m, N)``.
    """

    def __init__(self, model, x0, d_hat, reference, spec: OcpSpec, lifted: bool = False):
        x_ref, u_ref = reference
        self.model = model
        self.spec = spec
        self.lifted = lifted
        tf = model.transform
        self.n, self.m, self.N = model.n, spec.m, spec.N
        if model.m != self.m:
            raise ValueError(f"model has {model.m} inputs, OCP spec has {self.m}")
        self.x0m = tf.state_to_model(np.asarray(x0, dtype=float))
        if not np.all(np.isfinite(self.x0m)):
            raise SolverError("initial state is not finite", step=0)
        self.xref_m = tf.state_to_model(np.asarray(x_ref, dtype=float))
        self.u_ref = np.asarray(u_ref, dtype=float).reshape(-1)
        self.d_hat = np.asarray(d_hat, dtype=float)
        dim = model.size if lifted else self.n
        if self.d_hat.shape != (dim,):
            raise ValueError(f"disturbance estimate must have length {dim}")
        self.inv_scale = 1.0 / tf.u_scale
        self.Lq = _sqrt_psd(spec.Q)
        self.Lr = _sqrt_psd(spec.R)
        self.dict = model.dictionary

    # rollout ---------------------------------------------------------------
    def initial(self) -> np.ndarray:
        return self.dict.lift(self.x0m) if self.lifted else self.x0m.copy()

    def output(self, s) -> np.ndarray:
        return s[1:self.n + 1] if self.lifted else s

    def advance(self, s, u_i) -> np.ndarray:
        v = self.model.transform.input_to_model(u_i)
        if self.lifted:
            return self.model.step_lifted_model(s, v) + self.d_hat
        return self.model.step_model(s, v) + self.d_hat

    def linearize(self, s, u_i):
        """Return ``(A, B)`` with ``ds+/ds`` and ``ds+/du`` (physical input units)."""
        v = self.model.transform.input_to_model(u_i)
        if self.lifted:
            Kz, Bz = self.model.lifted_jacobians(s, v)
            return Kz, Bz * self.inv_scale
        z = self.dict.lift(s)
        Kz, Bz = self.model.lifted_jacobians(z, v)
        rows = slice(1, self.n + 1)
        return Kz[rows] @ self.dict.jacobian(s), Bz[rows] * self.inv_scale

    def rollout(self, u: np.ndarray, strict: bool = True):
        traj = [self.initial()]
        for i in range(self.N):
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = self.advance(traj[-1], u[:, i])
            if not np.all(np.isfinite(nxt)):
                if strict:
                    raise SolverError(f"surrogate rollout is non-finite at prediction step {i + 1}", step=i + 1)
                return None
            traj.append(nxt)
        return traj

    def cost_of(self, u, traj) -> float:
        c = 0.0
        for i in range(self.N):
            ex = self.output(traj[i]) - self.xref_m
            eu = u[:, i] - self.u_ref
            c += ex @ self.spec.Q @ ex + eu @ self.spec.R @ eu
        return float(c)

    def cost(self, u) -> float:
        traj = self.rollout(u, strict=False)
        return np.inf if traj is None else self.cost_of(u, traj)

    def residuals_and_jacobian(self, u, traj):
        n, m, N = self.n, self.m, self.N
        dim = traj[0].shape[0]
        rx = np.empty((N, n))
        Jx = np.zeros((N, n, N * m))
        S = np.zeros((dim, N * m))
        for i in range(N):
            rx[i] = self.Lq @ (self.output(traj[i]) - self.xref_m)
            Jx[i] = self.Lq @ self.output(S)
            if i < N - 1:
                A, B = self.linearize(traj[i], u[:, i])
                S = A @ S
                S[:, i * m:(i + 1) * m] += B
        ru = (self.Lr @ (u - self.u_ref[:, None])).T.reshape(-1)
        Ju = np.kron(np.eye(N), self.Lr)
        r = np.concatenate([rx.reshape(-1), ru])
        J = np.vstack([Jx.reshape(N * n, N * m), Ju])
        return r, J

    def gradient(self, u, traj=None) -> np.ndarray:
        """Adjoint gradient of the shooting cost, shaped like ``u``."""
        if traj is None:
            traj = self.rollout(u)
        Q, R = self.spec.Q, self.spec.R
        g = np.empty_like(u, dtype=float)
        lam = np.zeros(traj[0].shape[0])
        for i in reversed(range(self.N)):
            A, B = self.linearize(traj[i], u[:, i])
            g[:, i] = 2.0 * R @ (u[:, i] - self.u_ref) + B.T @ lam
            ex = self.output(traj[i]) - self.xref_m
            lam_out = 2.0 * Q @ ex
            lam = A.T @ lam
            if self.lifted:
                lam[1:self.n + 1] += lam_out
            else:
                lam += lam_out
        return g

    def to_physical(self, traj) -> np.ndarray:
        tf = self.model.transform
        return np.column_stack([tf.state_from_model(self.output(s)) for s in traj])


def projected_gradient(u, g, lo, hi) -> np.ndarray:
    """Zero gradient components that point out of active box faces."""
    pg = g.copy()
    at_lo = (u <= lo[:, None]) & (g > 0)
    at_hi = (u >= hi[:, None]) & (g < 0)
    pg[at_lo | at_hi] = 0.0
    return pg


def _snap(u, lo, hi):
    """Clip to the box and put entries within a few ulps of a face exactly on it."""
    lo, hi = lo[:, None], hi[:, None]
    u = np.clip(u, lo, hi)
    eps = 8 * np.finfo(float).eps
    u = np.where(u >= hi - eps * np.maximum(1.0, np.abs(hi)), hi, u)
    return np.where(u <= lo + eps * np.maximum(1.0, np.abs(lo)), lo, u)


def _box_lstsq(J, r, lb, ub):
    delta, *_ = np.linalg.lstsq(J, -r, rcond=None)
    if np.all(delta >= lb) and np.all(delta <= ub):
        return delta
    ub = np.maximum(ub, lb + 1e-300)
    return lsq_linear(J, -r, bounds=(lb, ub), method="bvls", tol=1e-13).x


def _line_search(prob, u_flat, delta, cost, slope, pg_norm, lo, hi):
    """Armijo backtracking along ``delta``; ``None`` if no acceptable step."""
    N, m = prob.N, prob.m
    noise = ROUNDOFF * (1.0 + abs(cost))
    alpha = 1.0
    # Backtracking is pointless once the predicted decrease is below the
    # rounding error of the cost itself.
    while alpha >= MIN_STEP and alpha * abs(slope) > noise:
        u_try = _snap((u_flat + alpha * delta).reshape(N, m).T, lo, hi)
        traj = prob.rollout(u_try, strict=False)
        if traj is not None:
            c_try = prob.cost_of(u_try, traj)
            if c_try - cost <= ARMIJO * alpha * slope:
                return u_try, traj, c_try
        alpha *= 0.5
    # Rounding-limited regime: take the full step if it does not raise the
    # cost beyond rounding and the projected gradient shrinks.
    u_try = _snap((u_flat + delta).reshape(N, m).T, lo, hi)
    traj = prob.rollout(u_try, strict=False)
    if traj is None:
        return None
    c_try = prob.cost_of(u_try, traj)
    if c_try > cost + noise:
        return None
    pg_try = projected_gradient(u_try, prob.gradient(u_try, traj), lo, hi)
    if np.linalg.norm(pg_try) >= pg_norm:
        return None
    return u_try, traj, c_try


def solve_ocp(model, x0, d_hat, reference, spec: OcpSpec, warm_start=None,
              lifted: bool = False) -> OcpSolution:
    """Solve the finite-horizon problem from ``x0`` with disturbance ``d_hat``.

    ``reference`` is ``(x_ref, u_ref)`` in physical units. Hitting the
    iteration cap is reported through ``converged=False``, not an exception.
    """
    prob = ShootingProblem(model, x0, d_hat, reference, spec, lifted)
    lo, hi = spec.u_lo, spec.u_hi
    m, N = spec.m, spec.N
    if warm_start is None:
        u = np.repeat(prob.u_ref[:, None], N, axis=1)
    else:
        u = np.asarray(warm_start, dtype=float).reshape(m, N).copy()
    u = _snap(u, lo, hi)
    lb_flat, ub_flat = np.tile(lo, N), np.tile(hi, N)

    traj = prob.rollout(u)
    cost = prob.cost_of(u, traj)
    status, converged, it = "max_iters", False, 0
    for it in range(spec.max_iters):
        r, J = prob.residuals_and_jacobian(u, traj)
        g = 2.0 * J.T @ r
        u_flat = u.T.reshape(-1)
        pg = projected_gradient(u, g.reshape(N, m).T, lo, hi)
        # At least one Gauss-Newton step is taken so the solve stays
        # scale-free when the state is already tiny.
        if it > 0 and np.linalg.norm(pg) <= spec.tol * (1.0 + abs(cost)):
            status, converged = "converged", True
            break
        delta = _box_lstsq(J, r, lb_flat - u_flat, ub_flat - u_flat)
        slope = float(g @ delta)
        if slope >= 0 or not np.any(delta):
            status, converged = "stationary", True
            break
        found = _line_search(prob, u_flat, delta, cost, slope, np.linalg.norm(pg), lo, hi)
        if found is None:
            status = "line_search_failed"
            break
        u_try, traj_try, c_try = found
        step = np.max(np.abs(u_try - u))
        u, traj, cost = u_try, traj_try, c_try
        if step <= 1e-15 * (1.0 + np.max(np.abs(u))):
            status, converged = "stationary", True
            break
    else:
        it = spec.max_iters

    g = prob.gradient(u, traj)
    stat = float(np.linalg.norm(projected_gradient(u, g, lo, hi)))
    if status == "stationary":
        converged = stat <= spec.tol * (1.0 + abs(cost))
    return OcpSolution(u, prob.to_physical(traj), cost, it, stat, converged, status)


@dataclass
class ControllerState:
    """Warm start carried between receding-horizon solves."""

    warm_start: np.ndarray | None = None
    last: OcpSolution | None = field(default=None, repr=False)


def shift_warm_start(u_seq: np.ndarray) -> np.ndarray:
    """Drop the applied input and repeat the last one."""
    return np.concatenate([u_seq[:, 1:], u_seq[:, -1:]], axis=1)


def mpc_step(state: ControllerState, model, x_measured, d_hat, reference, spec: OcpSpec,
             lifted: bool = False):
    """Return ``(u_applied, solution, next_state)`` for one receding-horizon step."""
    sol = solve_ocp(model, x_measured, d_hat, reference, spec, state.warm_start, lifted)
    nxt = replace(state, warm_start=shift_warm_start(sol.u_seq), last=sol)
    return sol.u_seq[:, 0].copy(), sol, nxt
