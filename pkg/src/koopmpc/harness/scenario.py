"""Declarative experiment descriptions and their TOML configuration format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..dynamics import (FourTanksParams, SampledSystem, VdpParams, make_four_tanks, make_vdp)
from ..mpc import OcpSpec

SYSTEMS = ("vdp", "four_tanks")
MODEL_KINDS = ("bilinear", "edmdc", "safedmd")
PROPAGATIONS = ("projected", "lifted")
CONTROLLER_MODES = ("standard", "offset_free")
EQUILIBRIUM_MODES = ("known", "unknown")

# Quadruple-tank initial guess and nominal operating point (levels in m, flows in m^3/h).
FOUR_TANKS_APPROX_X = (0.65, 0.66, 0.65, 0.66)
FOUR_TANKS_APPROX_U = (1.63, 2.0)
FOUR_TANKS_NOMINAL_X = (0.65, 0.66, 0.6417, 0.6882)
FOUR_TANKS_NOMINAL_U = (1.666, 1.974)


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


def _vec(v) -> tuple:
    return tuple(float(a) for a in np.asarray(v, dtype=float).reshape(-1))


@dataclass(frozen=True)
class SystemSpec:
    name: str = "vdp"
    dt: float = 0.05
    substeps: int = 1
    params: dict = field(default_factory=dict)

    def build(self) -> SampledSystem:
        try:
            if self.name == "vdp":
                vf = make_vdp(VdpParams(**self.params))
            elif self.name == "four_tanks":
                vf = make_four_tanks(FourTanksParams(**self.params))
            else:
                raise ConfigError(f"unknown system {self.name!r}; expected one of {SYSTEMS}")
            return SampledSystem(vf, self.dt, self.substeps)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid system parameters: {exc}") from exc


@dataclass(frozen=True)
class DataSpec:
    count: int
    seed: int
    box_lo: tuple
    box_hi: tuple


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "bilinear"
    max_degree: int = 3
    ridge: float = 0.0


@dataclass(frozen=True)
class ControllerSpec:
    mode: str = "offset_free"
    propagation: str = "projected"
    observer_gain: float = 1.0


@dataclass(frozen=True)
class EquilibriumSpec:
    """Target information.

    ``known``: ``x_ref``/``u_ref`` if given, otherwise the exact equilibrium of
    the ground truth with ``r(x) = y_target`` (seeded from the approximation).
    ``unknown``: only ``approx_x``/``approx_u`` and ``y_target`` are used.
    """

    mode: str = "known"
    x_ref: tuple | None = None
    u_ref: tuple | None = None
    approx_x: tuple | None = None
    approx_u: tuple | None = None
    output_indices: tuple | None = None
    y_target: tuple | None = None


@dataclass(frozen=True)
class MpcSpec:
    N: int = 50
    Q: tuple = ()
    R: tuple = ()
    u_lo: tuple = ()
    u_hi: tuple = ()
    tol: float = 1e-8
    max_iters: int = 500

    def ocp(self, n: int, m: int) -> OcpSpec:
        return OcpSpec(self.N, _weight(self.Q, n, "Q"), _weight(self.R, m, "R"),
                       np.array(self.u_lo), np.array(self.u_hi), self.tol, self.max_iters)


def _weight(w, dim: int, name: str) -> np.ndarray:
    a = np.asarray(w, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1 and a.shape[0] == dim:
        return np.diag(a)
    if a.shape == (dim, dim):
        return a
    raise ConfigError(f"{name} must be a scalar, a diagonal of length {dim} or a {dim}x{dim} matrix")


@dataclass(frozen=True)
class SimulationSpec:
    steps: int
    x0: tuple


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SystemSpec
    data: DataSpec
    model: ModelSpec
    controller: ControllerSpec
    equilibrium: EquilibriumSpec
    mpc: MpcSpec
    simulation: SimulationSpec

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return 2 if self.system.name == "vdp" else 4

    @property
    def m(self) -> int:
        return 1 if self.system.name == "vdp" else 2

    def validate(self) -> None:
        s = self
        _choice(s.system.name, SYSTEMS, "system.name")
        _choice(s.model.kind, MODEL_KINDS, "model.kind")
        _choice(s.controller.mode, CONTROLLER_MODES, "controller.mode")
        _choice(s.controller.propagation, PROPAGATIONS, "controller.propagation")
        _choice(s.equilibrium.mode, EQUILIBRIUM_MODES, "equilibrium.mode")
        n, m = s.n, s.m
        checks = [
            (len(s.data.box_lo) == n and len(s.data.box_hi) == n, "data box must have one bound per state"),
            (np.all(np.array(s.data.box_lo) <= np.array(s.data.box_hi)), "data box is empty"),
            (s.data.count >= 1, "data.count must be positive"),
            (len(s.mpc.u_lo) == m and len(s.mpc.u_hi) == m, "input box must have one bound per input"),
            (len(s.simulation.x0) == n, "simulation.x0 has the wrong dimension"),
            (s.simulation.steps >= 1, "simulation.steps must be positive"),
            (s.model.max_degree >= 1, "model.max_degree must be positive"),
            (0 < s.controller.observer_gain <= 1, "controller.observer_gain must lie in (0, 1]"),
        ]
        eq = s.equilibrium
        for name, val, dim in (("x_ref", eq.x_ref, n), ("u_ref", eq.u_ref, m),
                               ("approx_x", eq.approx_x, n), ("approx_u", eq.approx_u, m)):
            checks.append((val is None or len(val) == dim, f"equilibrium.{name} has the wrong dimension"))
        checks.append(((eq.x_ref is None) == (eq.u_ref is None),
                       "equilibrium.x_ref and equilibrium.u_ref must be given together"))
        if eq.mode == "unknown":
            checks.append((eq.approx_x is not None and eq.approx_u is not None,
                           "unknown-equilibrium mode needs approx_x and approx_u"))
            checks.append((eq.y_target is not None, "unknown-equilibrium mode needs y_target"))
        else:
            checks.append((eq.x_ref is not None or (eq.y_target is not None and eq.approx_x is not None),
                           "known-equilibrium mode needs x_ref/u_ref or y_target with an initial guess"))
        idx = self.output_indices
        checks.append((all(0 <= i < n for i in idx), "output_indices out of range"))
        if eq.y_target is not None:
            checks.append((len(eq.y_target) == len(idx), "y_target length must match output_indices"))
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            s.mpc.ocp(n, m)
            s.system.build()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def output_indices(self) -> tuple:
        idx = self.equilibrium.output_indices
        return tuple(range(self.n)) if idx is None else tuple(int(i) for i in idx)

    def with_(self, **changes) -> "Scenario":
        """Copy with section fields replaced, e.g. ``with_(controller={"mode": "standard"})``."""
        kwargs = {}
        for section, upd in changes.items():
            if section == "name":
                kwargs["name"] = upd
            else:
                kwargs[section] = replace(getattr(self, section), **upd)
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in fields(self):
            if f.name != "name":
                out[f.name] = {k: v for k, v in asdict(getattr(self, f.name)).items() if v is not None}
        return out


def _choice(value, allowed, key):
    if value not in allowed:
        raise ConfigError(f"{key} = {value!r}; expected one of {allowed}")


_SECTIONS = {
    "system": SystemSpec, "data": DataSpec, "model": ModelSpec, "controller": ControllerSpec,
    "equilibrium": EquilibriumSpec, "mpc": MpcSpec, "simulation": SimulationSpec,
}
_VECTOR_KEYS = {"box_lo", "box_hi", "x_ref", "u_ref", "approx_x", "approx_u", "output_indices",
                "y_target", "u_lo", "u_hi", "x0"}
_PARAM_KEYS = {"vdp": {f.name for f in fields(VdpParams)},
               "four_tanks": {f.name for f in fields(FourTanksParams)}}


def _convert(key, value):
    if key in _VECTOR_KEYS:
        return tuple(value) if key == "output_indices" else _vec(value)
    if key in ("Q", "R"):
        a = np.asarray(value, dtype=float)
        if a.ndim == 0:
            return float(a)
        if a.ndim == 1:
            return _vec(a)
        return tuple(tuple(float(x) for x in row) for row in a)
    return value


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from a parsed config document; unknown keys are errors."""
    doc = dict(doc)
    name = doc.pop("name", "scenario")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    missing = [s for s in _SECTIONS if s not in doc]
    if missing:
        raise ConfigError(f"missing config sections: {missing}")
    if not isinstance(doc["data"], dict) or "seed" not in doc["data"]:
        raise ConfigError("data.seed is mandatory")
    sections = {}
    for sec, cls in _SECTIONS.items():
        body = doc[sec]
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        allowed = {f.name for f in fields(cls)}
        extra = set(body) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
        try:
            sections[sec] = cls(**{k: _convert(k, v) for k, v in body.items()})
        except TypeError as exc:
            raise ConfigError(f"[{sec}]: {exc}") from exc
    system = sections["system"]
    if system.name in _PARAM_KEYS:
        extra = set(system.params) - _PARAM_KEYS[system.name]
        if extra:
            raise ConfigError(f"unknown keys in [system.params]: {sorted(extra)}")
    return Scenario(name=name, **sections)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return scenario_from_dict(doc)


def vdp_scenario(kind: str = "bilinear", mode: str = "offset_free", *, seed: int = 0,
                 count: int = 1000, steps: int = 600, propagation: str = "projected") -> Scenario:
    """Van-der-Pol benchmark: target at the origin, |u| <= 2, N = 50."""
    return Scenario(
        name=f"vdp-{kind}-{mode}" + ("-lifted" if propagation == "lifted" else ""),
        system=SystemSpec("vdp", 0.05, 1, {"nu": 0.1}),
        data=DataSpec(count, seed, (-2.0, -2.0), (2.0, 2.0)),
        model=ModelSpec(kind, 3),
        controller=ControllerSpec(mode, propagation),
        equilibrium=EquilibriumSpec("known", x_ref=(0.0, 0.0), u_ref=(0.0,)),
        mpc=MpcSpec(50, 1.0, 1e-2, (-2.0,), (2.0,)),
        simulation=SimulationSpec(steps, (1.0, 1.0)),
    )


def four_tanks_scenario(kind: str = "bilinear", mode: str = "offset_free", equilibrium: str = "known", *,
                        seed: int = 0, count: int = 1000, steps: int = 400,
                        propagation: str = "projected") -> Scenario:
    """Quadruple-tank benchmark: drive (h1, h2) to (0.65, 0.66) m from all levels at 1 m."""
    return Scenario(
        name=f"four_tanks-{kind}-{mode}-{equilibrium}" + ("-lifted" if propagation == "lifted" else ""),
        system=SystemSpec("four_tanks", 25.0, 32, {}),
        data=DataSpec(count, seed, (0.2, 0.2, 0.2, 0.2), (1.36, 1.36, 1.30, 1.30)),
        model=ModelSpec(kind, 2),
        controller=ControllerSpec(mode, propagation),
        equilibrium=EquilibriumSpec(equilibrium, approx_x=FOUR_TANKS_APPROX_X, approx_u=FOUR_TANKS_APPROX_U,
                                    output_indices=(0, 1), y_target=FOUR_TANKS_APPROX_X[:2]),
        mpc=MpcSpec(50, 1.0, 1e-4, (0.0, 0.0), (3.26, 4.0)),
        simulation=SimulationSpec(steps, (1.0, 1.0, 1.0, 1.0)),
    )
