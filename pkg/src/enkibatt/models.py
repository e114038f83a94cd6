"""Electro-thermal equivalent circuit models.

Two cell models share a two-node (core/surface) lumped thermal model with
Arrhenius-corrected resistances:

* ``thevenin``: OCV(SoC) source, ohmic resistance and ``n`` RC pairs.
* ``ndct``: nonlinear double-capacitor diffusion circuit (C_b - R_b - C_s)
  followed by one output RC pair.

The vectorized ``derivatives``/``output`` methods of :class:`TheveninModel` and
:class:`NdctModel` operate on a trailing state axis and a trailing parameter
axis, so a whole ensemble of parameter vectors integrates in one pass. The
named dataclasses and module-level helpers wrap the same code for single
parameter sets.

Sign convention: current ``I < 0`` discharges, ``I > 0`` charges.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .ocv import LINEAR_FIXTURE, OcvCurve


class InputSample(NamedTuple):
    current: float
    t_amb: float


class OutputSample(NamedTuple):
    voltage: float
    surf_temp: float


@dataclass(frozen=True)
class CellConstants:
    """Quantities that are held fixed during identification."""

    capacity_ah: float = 3.3
    t_ref: float = 298.15
    r_s: float = 0.0
    ocv: OcvCurve = field(default=LINEAR_FIXTURE)
    max_current: float = 4.0

    def __post_init__(self):
        if not self.capacity_ah > 0:
            raise ValueError("capacity_ah must be positive")
        if not self.t_ref > 0:
            raise ValueError("t_ref must be positive")
        if not self.r_s >= 0:
            raise ValueError("r_s must be non-negative")
        if not self.max_current > 0:
            raise ValueError("max_current must be positive")


@dataclass(frozen=True)
class ThermalParams:
    c_core: float
    c_surf: float
    r_core: float
    r_surf: float

    def __post_init__(self):
        for name in ("c_core", "c_surf", "r_core", "r_surf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"thermal parameter {name} must be positive")


@dataclass(frozen=True)
class TheveninParams:
    r_o: float
    r_rc: tuple[float, ...]
    c_rc: tuple[float, ...]
    thermal: ThermalParams
    kappa1: float
    kappa2: float
    constants: CellConstants = field(default_factory=CellConstants)

    def __post_init__(self):
        object.__setattr__(self, "r_rc", tuple(float(r) for r in np.atleast_1d(self.r_rc)))
        object.__setattr__(self, "c_rc", tuple(float(c) for c in np.atleast_1d(self.c_rc)))
        if len(self.r_rc) < 1 or len(self.r_rc) != len(self.c_rc):
            raise ValueError("need n >= 1 matching RC resistances and capacitances")
        if not self.r_o > 0 or min(self.r_rc) <= 0 or min(self.c_rc) <= 0:
            raise ValueError("R_o, R_i and C_i must be positive")

    @property
    def n_rc(self) -> int:
        return len(self.r_rc)


@dataclass(frozen=True)
class NdctParams:
    c_b: float
    c_s: float
    r_b: float
    r_o: float
    thermal: ThermalParams
    kappa1: float
    kappa2: float
    r_1: float
    c_1: float
    constants: CellConstants = field(default_factory=CellConstants)

    def __post_init__(self):
        for name in ("c_b", "c_s", "r_b", "r_o", "r_1", "c_1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def arrhenius(r_ref, kappa, t_c, t_ref):
    """Temperature-corrected resistance ``r_ref * exp(kappa * (1/t_c - 1/t_ref))``."""
    t_c_arr = np.asarray(t_c, dtype=float)
    if np.any(t_c_arr <= 0) or np.any(np.asarray(t_ref) <= 0):
        raise ValueError("temperatures must be positive kelvin values")
    if np.any(np.asarray(r_ref) <= 0):
        raise ValueError("reference resistance must be positive")
    return _arrhenius(r_ref, kappa, t_c, t_ref)


def _arrhenius(r_ref, kappa, t_c, t_ref):
    return r_ref * np.exp(kappa * (1.0 / t_c - 1.0 / t_ref))


def heat_generation(current, voltage, v_ocv):
    """Heat generation rate in W (positive when the cell heats up)."""
    return current * (voltage - v_ocv)


def thermal_derivatives(p: ThermalParams, t_c, t_s, t_amb, q_gen):
    """Core and surface temperature rates of the two-node lumped model."""
    return _thermal(p.c_core, p.c_surf, p.r_core, p.r_surf, t_c, t_s, t_amb, q_gen)


def _thermal(c_core, c_surf, r_core, r_surf, t_c, t_s, t_amb, q_gen):
    q_cond = (t_c - t_s) / r_core
    dtc = (q_gen - q_cond) / c_core
    dts = (q_cond - (t_s - t_amb) / r_surf) / c_surf
    return dtc, dts


class _Model:
    name: str
    param_names: tuple[str, ...]
    state_names: tuple[str, ...]
    # index of the normalized OCV argument in the state vector
    ocv_state: int

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def range_violation(self, x):
        s = x[..., self.ocv_state]
        return (s < 0.0) | (s > 1.0)

    def __eq__(self, other):
        return type(self) is type(other) and self.param_names == other.param_names

    def __hash__(self):
        return hash((type(self).__name__, self.param_names))

    def __repr__(self):
        return f"{type(self).__name__}()"


class TheveninModel(_Model):
    """Thevenin model with ``n_rc`` RC pairs and lumped thermal dynamics.

    State: ``[V_p1..V_pn, SoC, T_c, T_s]``.
    Parameters: ``[R_o, R_1..R_n, C_1..C_n, C_core, C_surf, R_core, R_surf,
    kappa1, kappa2]``.
    """

    name = "thevenin"

    def __init__(self, n_rc: int = 1):
        if n_rc < 1:
            raise ValueError("n_rc must be >= 1")
        self.n_rc = n_rc
        rs = [f"R_{i}" for i in range(1, n_rc + 1)]
        cs = [f"C_{i}" for i in range(1, n_rc + 1)]
        self.param_names = tuple(
            ["R_o", *rs, *cs, "C_core", "C_surf", "R_core", "R_surf", "kappa1", "kappa2"]
        )
        self.state_names = tuple([f"V_p{i}" for i in range(1, n_rc + 1)] + ["SoC", "T_c", "T_s"])
        self.ocv_state = n_rc

    def __repr__(self):
        return f"TheveninModel(n_rc={self.n_rc})"

    def initial_state(self, t_amb: float, soc0: float = 1.0):
        x = np.zeros(self.n_states)
        x[self.n_rc] = soc0
        x[self.n_rc + 1] = x[self.n_rc + 2] = t_amb
        return x

    def _split(self, theta):
        n = self.n_rc
        th = np.asarray(theta, dtype=float)
        return (
            th[..., 0], th[..., 1:1 + n], th[..., 1 + n:1 + 2 * n],
            *(th[..., 1 + 2 * n + k] for k in range(6)),
        )

    def derivatives(self, x, current, t_amb, theta, const: CellConstants):
        n = self.n_rc
        r_o, r, c, c_core, c_surf, r_core, r_surf, k1, k2 = self._split(theta)
        vp = x[..., :n]
        t_c = x[..., n + 1]
        t_s = x[..., n + 2]
        inv = 1.0 / t_c - 1.0 / const.t_ref
        r_oT = r_o * np.exp(k1 * inv)
        r_T = r * np.exp(k2 * inv)[..., None]
        dx = np.empty(np.broadcast_shapes(x.shape, r_o.shape + (self.n_states,)))
        dx[..., :n] = -vp / (r_T * c) - current / c
        dx[..., n] = current / (3600.0 * const.capacity_ah)
        # V - OCV = -sum(V_p) + R_oT * I
        q_gen = current * (r_oT * current - vp.sum(axis=-1))
        dx[..., n + 1], dx[..., n + 2] = _thermal(
            c_core, c_surf, r_core, r_surf, t_c, t_s, t_amb, q_gen
        )
        return dx

    def output(self, x, current, theta, const: CellConstants):
        n = self.n_rc
        th = np.asarray(theta, dtype=float)
        t_c = x[..., n + 1]
        r_oT = th[..., 0] * np.exp(th[..., 1 + 2 * n + 4] * (1.0 / t_c - 1.0 / const.t_ref))
        v = const.ocv(x[..., n]) - x[..., :n].sum(axis=-1) + r_oT * current
        return np.stack(np.broadcast_arrays(v, x[..., n + 2]), axis=-1)


class NdctModel(_Model):
    """Nonlinear double-capacitor model with lumped thermal dynamics.

    State: ``[V_b, V_s, V_1, T_c, T_s]``.
    Parameters: ``[C_b, C_s, R_b, R_o, C_core, C_surf, R_core, R_surf,
    kappa1, kappa2, R_1, C_1]``.
    """

    name = "ndct"
    param_names = (
        "C_b", "C_s", "R_b", "R_o", "C_core", "C_surf", "R_core", "R_surf",
        "kappa1", "kappa2", "R_1", "C_1",
    )
    state_names = ("V_b", "V_s", "V_1", "T_c", "T_s")
    ocv_state = 1

    def initial_state(self, t_amb: float, soc0: float = 1.0):
        return np.array([soc0, soc0, 0.0, t_amb, t_amb], dtype=float)

    def derivatives(self, x, current, t_amb, theta, const: CellConstants):
        th = np.asarray(theta, dtype=float)
        c_b, c_s, r_b, r_o, c_core, c_surf, r_core, r_surf, k1, k2, r_1, c_1 = (
            th[..., k] for k in range(12)
        )
        v_b, v_s, v_1, t_c, t_s = (x[..., k] for k in range(5))
        inv = 1.0 / t_c - 1.0 / const.t_ref
        r_bT = r_b * np.exp(k2 * inv)
        r_oT = r_o * np.exp(k1 * inv)
        dx = np.empty(np.broadcast_shapes(x.shape, r_o.shape + (5,)))
        dx[..., 0] = (v_s - v_b + const.r_s * current) / (c_b * r_bT)
        dx[..., 1] = (v_b - v_s) / (c_s * r_bT) + current / c_s
        dx[..., 2] = -v_1 / (r_1 * c_1) - current / c_1
        q_gen = current * (r_oT * current - v_1)
        dx[..., 3], dx[..., 4] = _thermal(c_core, c_surf, r_core, r_surf, t_c, t_s, t_amb, q_gen)
        return dx

    def output(self, x, current, theta, const: CellConstants):
        th = np.asarray(theta, dtype=float)
        r_oT = th[..., 3] * np.exp(th[..., 8] * (1.0 / x[..., 3] - 1.0 / const.t_ref))
        v = const.ocv(x[..., 1]) - x[..., 2] + r_oT * current
        return np.stack(np.broadcast_arrays(v, x[..., 4]), axis=-1)


THEVENIN = TheveninModel(1)
NDCT = NdctModel()


def get_model(name, n_rc: int = 1) -> _Model:
    if isinstance(name, _Model):
        return name
    key = str(name).lower()
    if key in ("thevenin", "thevenint"):
        return TheveninModel(n_rc)
    if key in ("ndct", "ndc"):
        return NDCT
    raise ValueError(f"unknown model {name!r}; expected 'thevenin' or 'ndct'")


# Nominal parameter sets used as ground truth for synthetic studies.
THEVENIN_TRUE = np.array([0.026, 0.02, 3250.0, 40.0, 10.0, 4.0, 7.0, 30.0, 70.0])
NDCT_TRUE = np.array(
    [10037.0, 973.0, 0.019, 0.026, 40.0, 10.0, 4.0, 7.0, 30.0, 70.0, 0.02, 3250.0]
)


def nominal_params(model) -> np.ndarray:
    model = get_model(model)
    if isinstance(model, NdctModel):
        return NDCT_TRUE.copy()
    if model.n_rc != 1:
        raise ValueError("nominal values exist only for the single-RC Thevenin model")
    return THEVENIN_TRUE.copy()


def pack_params(p) -> np.ndarray:
    """Flatten named parameters into the identification vector."""
    th = p.thermal
    thermal = [th.c_core, th.c_surf, th.r_core, th.r_surf]
    if isinstance(p, TheveninParams):
        return np.array([p.r_o, *p.r_rc, *p.c_rc, *thermal, p.kappa1, p.kappa2], dtype=float)
    if isinstance(p, NdctParams):
        return np.array(
            [p.c_b, p.c_s, p.r_b, p.r_o, *thermal, p.kappa1, p.kappa2, p.r_1, p.c_1],
            dtype=float,
        )
    raise TypeError(f"cannot pack {type(p).__name__}")


def unpack_params(theta: Sequence[float], model, constants: CellConstants | None = None):
    """Inverse of :func:`pack_params` for a given model and fixed constants."""
    model = get_model(model)
    constants = constants or CellConstants()
    th = np.asarray(theta, dtype=float)
    if th.shape != (model.n_params,):
        raise ValueError(
            f"{model.name} expects a parameter vector of length {model.n_params}, "
            f"got shape {th.shape}"
        )
    vals = [float(v) for v in th]
    if isinstance(model, TheveninModel):
        n = model.n_rc
        rest = vals[1 + 2 * n:]
        return TheveninParams(
            r_o=vals[0], r_rc=tuple(vals[1:1 + n]), c_rc=tuple(vals[1 + n:1 + 2 * n]),
            thermal=ThermalParams(*rest[:4]), kappa1=rest[4], kappa2=rest[5],
            constants=constants,
        )
    return NdctParams(
        c_b=vals[0], c_s=vals[1], r_b=vals[2], r_o=vals[3],
        thermal=ThermalParams(*vals[4:8]), kappa1=vals[8], kappa2=vals[9],
        r_1=vals[10], c_1=vals[11], constants=constants,
    )


def _model_of(p) -> _Model:
    if isinstance(p, TheveninParams):
        return TheveninModel(p.n_rc)
    return NDCT


def _check_state(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite model state")
    return x


def thevenin_derivatives(p: TheveninParams, x, u) -> np.ndarray:
    x = _check_state(x)
    current, t_amb = u
    return _model_of(p).derivatives(x, current, t_amb, pack_params(p), p.constants)


def thevenin_output(p: TheveninParams, x, u) -> OutputSample:
    current, _ = u
    v, ts = _model_of(p).output(np.asarray(x, float), current, pack_params(p), p.constants)
    return OutputSample(float(v), float(ts))


def ndct_derivatives(p: NdctParams, x, u) -> np.ndarray:
    x = _check_state(x)
    current, t_amb = u
    return NDCT.derivatives(x, current, t_amb, pack_params(p), p.constants)


def ndct_output(p: NdctParams, x, u) -> OutputSample:
    current, _ = u
    v, ts = NDCT.output(np.asarray(x, float), current, pack_params(p), p.constants)
    return OutputSample(float(v), float(ts))


def steady_state_heat(p: TheveninParams, current: float, t_c: float) -> float:
    """Joule heat at the constant-current fixed point of the Thevenin model."""
    t_ref = p.constants.t_ref
    r_total = _arrhenius(p.r_o, p.kappa1, t_c, t_ref) + sum(
        _arrhenius(r, p.kappa2, t_c, t_ref) for r in p.r_rc
    )
    return current * current * float(r_total)


__all__ = [
    "InputSample", "OutputSample", "CellConstants", "ThermalParams", "TheveninParams",
    "NdctParams", "TheveninModel", "NdctModel", "THEVENIN", "NDCT", "get_model",
    "arrhenius", "heat_generation", "thermal_derivatives", "thevenin_derivatives",
    "thevenin_output", "ndct_derivatives", "ndct_output", "pack_params", "unpack_params",
    "nominal_params", "THEVENIN_TRUE", "NDCT_TRUE", "steady_state_heat",
]
