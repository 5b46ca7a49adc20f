"""EDMD regression and Koopman surrogate models for control-affine systems.

Three surrogate families share one interface:

* :class:`BilinearKoopmanModel` -- one Koopman matrix per basis input,
  interpolated affinely in the input (optionally with the SafEDMD block
  structure that pins the origin as a lifted fixed point);
* :class:`EdmdcModel` -- the linear lifted model ``z+ = A z + B u``.

Models carry a :class:`CoordinateTransform`; public ``predict`` works in
physical units while ``step_model``/``lifted_jacobians`` work in the shifted
and scaled coordinates the regression was done in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dictionary import Dictionary, build_monomial_dictionary
from .dynamics import SampledSystem, sampled_step

RCOND = 1e-10
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CoordinateTransform:
    """Affine change of coordinates ``x_m = x - x_shift``, ``v = (u - u_shift) / u_scale``."""

    x_shift: np.ndarray
    u_shift: np.ndarray
    u_scale: np.ndarray

    @classmethod
    def identity(cls, n: int, m: int) -> "CoordinateTransform":
        return cls(np.zeros(n), np.zeros(m), np.ones(m))

    @classmethod
    def around(cls, x_eq, u_eq, u_lo, u_hi) -> "CoordinateTransform":
        """Shift to ``(x_eq, u_eq)`` and scale inputs so the box maps into [-2, 2]."""
        u_eq = np.asarray(u_eq, dtype=float)
        reach = np.maximum(np.abs(np.asarray(u_lo) - u_eq), np.abs(np.asarray(u_hi) - u_eq))
        scale = np.where(reach > 0, reach / 2.0, 1.0)
        return cls(np.asarray(x_eq, dtype=float), u_eq, scale)

    def __post_init__(self):
        for name in ("x_shift", "u_shift", "u_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if np.any(self.u_scale <= 0):
            raise ValueError("input scales must be positive")

    def state_to_model(self, x):
        x = np.asarray(x, dtype=float)
        return x - self.x_shift.reshape((-1,) + (1,) * (x.ndim - 1))

    def state_from_model(self, xm):
        xm = np.asarray(xm, dtype=float)
        return xm + self.x_shift.reshape((-1,) + (1,) * (xm.ndim - 1))

    def input_to_model(self, u):
        return (np.asarray(u, dtype=float) - self.u_shift) / self.u_scale

    def input_from_model(self, v):
        return np.asarray(v, dtype=float) * self.u_scale + self.u_shift

    def to_dict(self) -> dict:
        return {"x_shift": self.x_shift.tolist(), "u_shift": self.u_shift.tolist(),
                "u_scale": self.u_scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CoordinateTransform":
        return cls(np.array(data["x_shift"], dtype=float), np.array(data["u_shift"], dtype=float),
                   np.array(data["u_scale"], dtype=float))


@dataclass(frozen=True)
class SnapshotSet:
    """States ``X`` and successors ``Y`` (columns) generated under the held input ``u``.

    All quantities are in physical units.
    """

    X: np.ndarray
    Y: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if X.shape != Y.shape:
            raise ValueError(f"X {X.shape} and Y {Y.shape} differ in shape")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(-1))

    @property
    def d(self) -> int:
        return self.X.shape[1]


def regress(PsiX: np.ndarray, PsiY: np.ndarray, ridge: float = 0.0, literal: bool = False) -> np.ndarray:
    """Least-squares ``K`` minimising ``||K PsiX - PsiY||_F``.

    The minimal-norm solution ``PsiY PsiX^+`` is computed by SVD with relative
    cutoff ``RCOND``. ``ridge > 0`` adds Tikhonov damping. ``literal=True``
    returns ``(PsiX PsiX^T)^+ PsiX PsiY^T`` instead, which is the transpose of
    the minimiser and only useful for comparisons.
    """
    if PsiX.shape[1] == 0:
        raise ValueError("empty data set")
    if literal:
        C = PsiX @ PsiX.T
        A = PsiX @ PsiY.T
        return np.linalg.pinv(C, rcond=RCOND) @ A
    if ridge > 0:
        G = PsiX @ PsiX.T + ridge * np.eye(PsiX.shape[0])
        return np.linalg.solve(G, PsiX @ PsiY.T).T
    Kt, *_ = np.linalg.lstsq(PsiX.T, PsiY.T, rcond=RCOND)
    return Kt.T


def _lift_pair(dictionary: Dictionary, data: SnapshotSet, transform: CoordinateTransform | None):
    X, Y = data.X, data.Y
    if transform is not None:
        X, Y = transform.state_to_model(X), transform.state_to_model(Y)
    return dictionary.lift(X), dictionary.lift(Y)


def fit_autonomous(dictionary: Dictionary, data: SnapshotSet,
                   transform: CoordinateTransform | None = None, ridge: float = 0.0,
                   literal: bool = False) -> np.ndarray:
    if data.d < 1:
        raise ValueError("empty data set")
    PsiX, PsiY = _lift_pair(dictionary, data, transform)
    return regress(PsiX, PsiY, ridge=ridge, literal=literal)


class _LiftedModel:
    """Shared surrogate plumbing: transforms, lifting and projection."""

    dictionary: Dictionary
    transform: CoordinateTransform
    kind: str

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def size(self) -> int:
        return self.dictionary.size

    def lift_state(self, x) -> np.ndarray:
        """Lift a physical state into the model's observable coordinates."""
        return self.dictionary.lift(self.transform.state_to_model(x))

    def step_lifted_model(self, z, v) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def lifted_jacobians(self, z, v):  # pragma: no cover - abstract
        raise NotImplementedError

    def step_model(self, xm, v) -> np.ndarray:
        """One projected step in model coordinates."""
        return self.dictionary.project(self.step_lifted_model(self.dictionary.lift(xm), v))

    def predict(self, x, u) -> np.ndarray:
        self._check_input(u)
        xm = self.transform.state_to_model(x)
        v = self.transform.input_to_model(u)
        return self.transform.state_from_model(self.step_model(xm, v))

    def predict_lifted(self, z, u) -> np.ndarray:
        """Propagate a lifted vector one step without projecting; ``u`` is physical."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"lifted vector must have length {self.size}")
        self._check_input(u)
        return self.step_lifted_model(z, self.transform.input_to_model(u))

    def _check_input(self, u):
        if np.asarray(u).reshape(-1).shape[0] != self.m:
            raise ValueError(f"input must have dimension {self.m}")

    def save(self, path) -> None:
        save_model(self, path)


@dataclass(frozen=True, eq=False)
class BilinearKoopmanModel(_LiftedModel):
    dictionary: Dictionary
    K0: np.ndarray
    Ki: tuple
    safedmd: bool = False
    transform: CoordinateTransform | None = None
    _diffs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        size = self.dictionary.size
        mats = [np.ascontiguousarray(K, dtype=float) for K in (self.K0, *self.Ki)]
        for K in mats:
            if K.shape != (size, size):
                raise ValueError(f"Koopman matrices must be {size}x{size}, got {K.shape}")
        object.__setattr__(self, "K0", mats[0])
        object.__setattr__(self, "Ki", tuple(mats[1:]))
        if self.transform is None:
            object.__setattr__(self, "transform", CoordinateTransform.identity(self.n, self.m))
        object.__setattr__(self, "_diffs", tuple(K - self.K0 for K in self.Ki))

    kind = property(lambda self: "safedmd" if self.safedmd else "bilinear")

    @property
    def m(self) -> int:
        return len(self.Ki)

    @property
    def input_basis(self) -> np.ndarray:
        return np.eye(self.m)

    def koopman_at(self, v) -> np.ndarray:
        """Interpolated Koopman matrix for the transformed input ``v``."""
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != self.m:
            raise ValueError(f"input must have dimension {self.m}")
        nz = np.flatnonzero(v)
        if nz.size == 0:
            return self.K0.copy()
        if nz.size == 1 and v[nz[0]] == 1.0:
            return self.Ki[nz[0]].copy()
        # difference form keeps structurally zero entries (SafEDMD first row) exact
        K = self.K0.copy()
        for vi, D in zip(v, self._diffs):
            K += vi * D
        return K

    def step_lifted_model(self, z, v) -> np.ndarray:
        return self.koopman_at(v) @ z

    def lifted_jacobians(self, z, v):
        Bz = np.column_stack([D @ z for D in self._diffs])
        return self.koopman_at(v), Bz


@dataclass(frozen=True, eq=False)
class EdmdcModel(_LiftedModel):
    dictionary: Dictionary
    A: np.ndarray
    B: np.ndarray
    transform: CoordinateTransform | None = None
    kind = "edmdc"

    def __post_init__(self):
        size = self.dictionary.size
        A = np.ascontiguousarray(self.A, dtype=float)
        B = np.ascontiguousarray(np.atleast_2d(self.B), dtype=float)
        if A.shape != (size, size) or B.shape[0] != size:
            raise ValueError("inconsistent EDMDc matrix shapes")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.transform is None:
            object.__setattr__(self, "transform", CoordinateTransform.identity(self.n, self.m))

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step_lifted_model(self, z, v) -> np.ndarray:
        return self.A @ z + self.B @ np.asarray(v, dtype=float).reshape(-1)

    def lifted_jacobians(self, z, v):
        return self.A, self.B


def _check_basis(datasets: Sequence[SnapshotSet], transform: CoordinateTransform, m: int):
    if len(datasets) != m + 1:
        raise ValueError(f"expected {m + 1} datasets (u=0 and u=e_i), got {len(datasets)}")
    basis = np.vstack([np.zeros(m), np.eye(m)])
    for i, ds in enumerate(datasets):
        v = transform.input_to_model(ds.u)
        if not np.allclose(v, basis[i], rtol=0, atol=1e-9):
            raise ValueError(f"dataset {i} was generated with transformed input {v}, expected {basis[i]}")


def fit_bilinear(dictionary: Dictionary, datasets: Sequence[SnapshotSet],
                 transform: CoordinateTransform | None = None, ridge: float = 0.0) -> BilinearKoopmanModel:
    """Fit one Koopman matrix per basis input and interpolate between them."""
    m = len(datasets) - 1
    if m < 1:
        raise ValueError("need at least two datasets")
    transform = transform or CoordinateTransform.identity(dictionary.n, m)
    _check_basis(datasets, transform, m)
    mats = [fit_autonomous(dictionary, ds, transform, ridge=ridge) for ds in datasets]
    return BilinearKoopmanModel(dictionary, mats[0], tuple(mats[1:]), False, transform)


def fit_safedmd(dictionary: Dictionary, datasets: Sequence[SnapshotSet],
                transform: CoordinateTransform | None = None, ridge: float = 0.0) -> BilinearKoopmanModel:
    """Bilinear fit constrained so the lifted origin is a fixed point for ``u = 0``.

    ``K0 = [[1, 0], [0, A]]`` and ``Ki = [[1, 0], [b_i, B_i]]``; the transform
    must place the target equilibrium at the origin.
    """
    m = len(datasets) - 1
    if m < 1:
        raise ValueError("need at least two datasets")
    transform = transform or CoordinateTransform.identity(dictionary.n, m)
    _check_basis(datasets, transform, m)
    size = dictionary.size
    mats = []
    for i, ds in enumerate(datasets):
        PsiX, PsiY = _lift_pair(dictionary, ds, transform)
        K = np.zeros((size, size))
        K[0, 0] = 1.0
        if i == 0:
            K[1:, 1:] = regress(PsiX[1:], PsiY[1:], ridge=ridge)
        else:
            K[1:, :] = regress(PsiX, PsiY[1:], ridge=ridge)
        mats.append(K)
    return BilinearKoopmanModel(dictionary, mats[0], tuple(mats[1:]), True, transform)


def pool_snapshots(datasets: Sequence[SnapshotSet]):
    """Stack snapshot sets into ``(X, U, Y)`` column arrays."""
    X = np.hstack([ds.X for ds in datasets])
    Y = np.hstack([ds.Y for ds in datasets])
    U = np.hstack([np.repeat(ds.u[:, None], ds.d, axis=1) for ds in datasets])
    return X, U, Y


def fit_edmdc(dictionary: Dictionary, X, U, Y, transform: CoordinateTransform | None = None,
              ridge: float = 0.0) -> EdmdcModel:
    """Linear lifted model ``z+ = A z + B v`` from arbitrary ``(x, u, y)`` columns."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if X.shape[1] == 0:
        raise ValueError("empty data set")
    m = U.shape[0]
    transform = transform or CoordinateTransform.identity(dictionary.n, m)
    V = (U - transform.u_shift[:, None]) / transform.u_scale[:, None]
    PsiX = dictionary.lift(transform.state_to_model(X))
    PsiY = dictionary.lift(transform.state_to_model(Y))
    AB = regress(np.vstack([PsiX, V]), PsiY, ridge=ridge)
    size = dictionary.size
    return EdmdcModel(dictionary, AB[:, :size], AB[:, size:], transform)


def koopman_at(model: BilinearKoopmanModel, v) -> np.ndarray:
    return model.koopman_at(v)


def predict(model, x, u) -> np.ndarray:
    return model.predict(x, u)


def predict_lifted(model, z, u) -> np.ndarray:
    return model.predict_lifted(z, u)


def modeling_error(truth: SampledSystem, model, x, u) -> np.ndarray:
    """``F(x, u) - F_hat(x, u)``: the one-step mismatch the observer estimates."""
    return sampled_step(truth, x, u) - model.predict(x, u)


def _matrix_to_json(M: np.ndarray) -> dict:
    return {"rows": M.shape[0], "cols": M.shape[1], "data": M.ravel(order="C").tolist()}


def _matrix_from_json(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["rows"], d["cols"])


def model_to_dict(model) -> dict:
    doc = {"format": "koopmpc-model", "version": FORMAT_VERSION, "kind": model.kind,
           "dictionary": model.dictionary.to_dict(), "transform": model.transform.to_dict()}
    if isinstance(model, BilinearKoopmanModel):
        doc["safedmd"] = model.safedmd
        doc["input_basis"] = model.input_basis.tolist()
        doc["matrices"] = {"K0": _matrix_to_json(model.K0),
                           "Ki": [_matrix_to_json(K) for K in model.Ki]}
    else:
        doc["safedmd"] = False
        doc["matrices"] = {"A": _matrix_to_json(model.A), "B": _matrix_to_json(model.B)}
    return doc


def model_from_dict(doc: dict):
    if doc.get("format") != "koopmpc-model":
        raise ValueError("not a koopmpc model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    dictionary = Dictionary.from_dict(doc["dictionary"])
    transform = CoordinateTransform.from_dict(doc["transform"])
    mats = doc["matrices"]
    if doc["kind"] in ("bilinear", "safedmd"):
        return BilinearKoopmanModel(dictionary, _matrix_from_json(mats["K0"]),
                                    tuple(_matrix_from_json(K) for K in mats["Ki"]),
                                    bool(doc["safedmd"]), transform)
    if doc["kind"] == "edmdc":
        return EdmdcModel(dictionary, _matrix_from_json(mats["A"]), _matrix_from_json(mats["B"]), transform)
    raise ValueError(f"unknown model kind {doc['kind']!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "CoordinateTransform", "SnapshotSet", "BilinearKoopmanModel", "EdmdcModel",
    "regress", "fit_autonomous", "fit_bilinear", "fit_safedmd", "fit_edmdc", "pool_snapshots",
    "koopman_at", "predict", "predict_lifted", "modeling_error",
    "save_model", "load_model", "model_to_dict", "model_from_dict", "build_monomial_dictionary",
]
