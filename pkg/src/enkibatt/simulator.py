"""Fixed-step simulation of the cell models over sampled drive cycles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import signal

from .models import CellConstants, get_model

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised when a forward simulation produces a non-finite state."""

    def __init__(self, message, step=None, member=None):
        super().__init__(message)
        self.step = step
        self.member = member


@dataclass(frozen=True)
class DriveCycle:
    """Uniformly sampled input sequence ``(t_k, I_k, T_amb,k)``."""

    times: np.ndarray
    current: np.ndarray
    t_amb: np.ndarray
    max_current: float = 4.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        i = np.asarray(self.current, dtype=float)
        amb = np.broadcast_to(np.asarray(self.t_amb, dtype=float), t.shape).copy()
        if t.ndim != 1 or t.size == 0 or i.shape != t.shape:
            raise ValueError("times and current must be 1-D arrays of equal, non-zero length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(i)) and np.all(np.isfinite(amb))):
            raise ValueError("drive cycle contains non-finite values")
        if np.any(amb <= 0):
            raise ValueError("ambient temperature must be positive kelvin")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            dt = steps[0]
            tol = 1e-9 * dt + 8 * np.finfo(float).eps * np.max(np.abs(t))
            bad = np.nonzero(np.abs(steps - dt) > tol)[0]
            if bad.size:
                raise ValueError(f"non-uniform spacing at sample {bad[0] + 2}")
        if np.max(np.abs(i)) > self.max_current * (1 + 1e-12):
            raise ValueError(
                f"current magnitude {np.max(np.abs(i)):.4g} A exceeds the "
                f"{self.max_current} A limit"
            )
        for name, arr in (("times", t), ("current", i), ("t_amb", amb)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 1.0

    @classmethod
    def concatenate(cls, cycles: Sequence["DriveCycle"]) -> "DriveCycle":
        """Join cycles back to back on one continuous, uniform time axis."""
        if not cycles:
            raise ValueError("nothing to concatenate")
        dt = cycles[0].dt
        if any(abs(c.dt - dt) > 1e-9 * dt for c in cycles if len(c) > 1):
            raise ValueError("cycles must share the same sampling interval")
        n = sum(len(c) for c in cycles)
        times = cycles[0].times[0] + dt * np.arange(n)
        return cls(
            times,
            np.concatenate([c.current for c in cycles]),
            np.concatenate([c.t_amb for c in cycles]),
            max_current=max(c.max_current for c in cycles),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Independent Gaussian measurement noise on voltage and surface temperature."""

    voltage_var: float = 1e-4
    temp_var: float = 1e-3
    allow_zero: bool = False

    def __post_init__(self):
        for name in ("voltage_var", "temp_var"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0 or (v == 0 and not self.allow_zero):
                raise ValueError(f"{name} must be a positive variance, got {v}")

    @property
    def step_cov(self) -> np.ndarray:
        return np.array([self.voltage_var, self.temp_var])

    def stacked_diag(self, n_steps: int) -> np.ndarray:
        """Diagonal of the stacked covariance ``I_H (x) diag(var_V, var_T)``."""
        return np.tile(self.step_cov, n_steps)


@dataclass
class Trajectory:
    """Noiseless simulation record at the sampling instants.

    For a single parameter vector ``outputs`` has shape ``(H, 2)`` and ``states``
    ``(H, n_states)``; for an ensemble a leading member axis is added.
    """

    model: str
    times: np.ndarray
    outputs: np.ndarray
    states: np.ndarray | None
    range_violation: np.ndarray | bool
    failed: np.ndarray | bool = False
    failed_step: np.ndarray | int | None = None

    def __len__(self):
        return self.times.size


@dataclass
class MeasurementSeries:
    times: np.ndarray
    voltage: np.ndarray
    surf_temp: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.surf_temp = np.asarray(self.surf_temp, dtype=float)
        if not (self.times.shape == self.voltage.shape == self.surf_temp.shape):
            raise ValueError("times, voltage and surf_temp must have equal length")
        if self.times.ndim != 1:
            raise ValueError("measurement series must be one-dimensional")

    def __len__(self):
        return self.times.size

    @property
    def values(self) -> np.ndarray:
        return np.column_stack([self.voltage, self.surf_temp])


def rk4_step(
    deriv: Callable, x, u, dt: float, *, check: bool = False, step: int | None = None
):
    """One classical Runge-Kutta step with ``u`` held constant over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = deriv(x, u)
    k2 = deriv(x + 0.5 * dt * k1, u)
    k3 = deriv(x + 0.5 * dt * k2, u)
    k4 = deriv(x + dt * k3, u)
    x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if check and not np.all(np.isfinite(x_new)):
        raise SimulationError(f"non-finite state in integration step {step}", step=step)
    return x_new


def simulate(
    model,
    theta,
    constants: CellConstants | None,
    cycle: DriveCycle,
    x0=None,
    substeps: int = 1,
    *,
    store_states: bool = True,
) -> Trajectory:
    """Integrate ``model`` over ``cycle`` and sample the noiseless outputs.

    ``theta`` is one parameter vector or a ``(M, n_params)`` ensemble. A single
    vector raises :class:`SimulationError` on divergence; an ensemble marks the
    diverged members in ``Trajectory.failed`` and keeps integrating the rest.
    ``x0`` defaults to a rested, fully charged cell at the first ambient
    temperature.
    """
    model = get_model(model)
    constants = constants or CellConstants()
    theta = np.asarray(theta, dtype=float)
    batch = theta.ndim == 2
    if theta.shape[-1] != model.n_params or theta.ndim not in (1, 2):
        raise ValueError(
            f"{model.name} expects parameter vectors of length {model.n_params}, "
            f"got shape {theta.shape}"
        )
    if substeps < 1 or int(substeps) != substeps:
        raise ValueError("substeps must be a positive integer")
    m = theta.shape[0] if batch else 1
    th = theta if batch else theta[None, :]
    if x0 is None:
        x0 = model.initial_state(float(cycle.t_amb[0]))
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (m, model.n_states)))
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")

    n = len(cycle)
    h = cycle.dt / substeps
    tc_idx = model.state_names.index("T_c")
    outputs = np.empty((m, n, 2))
    states = np.empty((m, n, model.n_states)) if store_states else None
    violation = np.zeros(m, dtype=bool)
    failed = np.zeros(m, dtype=bool)
    failed_step = np.full(m, -1)

    def deriv(xx, u):
        return model.derivatives(xx, u[0], u[1], th, constants)

    with np.errstate(all="ignore"):
        for k in range(n):
            cur = float(cycle.current[k])
            amb = float(cycle.t_amb[k])
            if store_states:
                states[:, k] = x
            outputs[:, k] = model.output(x, cur, th, constants)
            violation |= model.range_violation(x)
            if k == n - 1:
                break
            for _ in range(substeps):
                x = rk4_step(deriv, x, (cur, amb), h)
            bad = ~np.all(np.isfinite(x), axis=1) | ~(x[:, tc_idx] > 0)
            new_bad = bad & ~failed
            if new_bad.any():
                if not batch:
                    raise SimulationError(
                        f"{model.name} simulation diverged in step {k + 1}", step=k + 1
                    )
                failed_step[new_bad] = k + 1
                failed |= new_bad
                x[new_bad] = np.nan
    outputs[failed] = np.nan
    if batch:
        return Trajectory(model.name, cycle.times, outputs, states, violation, failed, failed_step)
    return Trajectory(
        model.name, cycle.times, outputs[0], None if states is None else states[0],
        bool(violation[0]),
    )


def add_noise(traj: Trajectory, noise: NoiseSpec, seed=None) -> MeasurementSeries:
    """Corrupt the noiseless outputs with independent Gaussian noise."""
    out = np.asarray(traj.outputs)
    if out.ndim != 2:
        raise ValueError("add_noise expects a single-member trajectory")
    if not np.all(np.isfinite(out)):
        raise ValueError("trajectory contains non-finite outputs")
    rng = np.random.default_rng(seed)
    noisy = out + rng.standard_normal(out.shape) * np.sqrt(noise.step_cov)
    return MeasurementSeries(traj.times, noisy[:, 0], noisy[:, 1])


def stack(series) -> np.ndarray:
    """Step-major stacked output vector ``[V_1, T_1, V_2, T_2, ...]``."""
    values = series.values if isinstance(series, MeasurementSeries) else np.asarray(series, float)
    if values.size == 0:
        raise ValueError("cannot stack an empty series")
    return values.reshape(-1).copy()


def unstack(y, times=None) -> MeasurementSeries:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size % 2:
        raise ValueError("stacked output must be a 1-D vector of even length")
    pairs = y.reshape(-1, 2)
    if times is None:
        times = np.arange(pairs.shape[0], dtype=float)
    return MeasurementSeries(times, pairs[:, 0].copy(), pairs[:, 1].copy())


@dataclass(frozen=True)
class ProfileSpec:
    """Recipe for a synthetic composite current profile.

    The profile is split into blocks of ``block_s`` seconds. Each block is a
    pulse train (period ``pulse_period_s``, on-fraction ``duty``, sign
    alternating discharge/charge from pulse to pulse) or, with probability
    ``random_fraction``, a low-pass filtered pseudo-random segment.
    """

    duration_s: float
    dt: float = 1.0
    amplitude: float = 4.0
    pulse_current: float = 3.0
    pulse_period_s: float = 120.0
    duty: float = 0.5
    random_fraction: float = 0.5
    block_s: float = 300.0
    cutoff_hz: float = 0.02
    charge_neutral: bool = True
    t_amb: float = 298.15

    def __post_init__(self):
        if not (self.duration_s > 0 and self.dt > 0 and self.amplitude > 0):
            raise ValueError("duration, dt and amplitude must be positive")
        n = self.duration_s / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("duration must be a whole multiple of dt")
        if not 0 < self.duty <= 1:
            raise ValueError("duty must lie in (0, 1]")
        if not 0 <= self.random_fraction <= 1:
            raise ValueError("random_fraction must lie in [0, 1]")
        if self.pulse_current > self.amplitude:
            raise ValueError("pulse_current exceeds the amplitude cap")
        if not 0 < self.cutoff_hz < 0.5 / self.dt:
            raise ValueError("cutoff must lie below the Nyquist frequency")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s / self.dt))


def synth_profile(spec: ProfileSpec, seed=None) -> DriveCycle:
    """Generate a deterministic composite charge/discharge drive cycle."""
    rng = np.random.default_rng(seed)
    n = spec.n_samples
    block = max(1, int(round(spec.block_s / spec.dt)))
    period = max(1, int(round(spec.pulse_period_s / spec.dt)))
    on = max(1, int(round(spec.duty * period)))
    sos = signal.butter(4, spec.cutoff_hz, fs=1.0 / spec.dt, output="sos")
    current = np.zeros(n)
    sign = -1.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        length = stop - start
        if rng.random() < spec.random_fraction:
            raw = rng.standard_normal(length + 200)
            seg = signal.sosfiltfilt(sos, raw)[100:100 + length]
            if spec.charge_neutral:
                seg = seg - seg.mean()
            else:
                seg = -np.abs(seg)
            peak = np.max(np.abs(seg))
            if peak > 0:
                seg *= spec.amplitude * rng.uniform(0.6, 1.0) / peak
            current[start:stop] = seg
        else:
            for p0 in range(start, stop - period + 1, period):
                current[p0:p0 + on] = sign * spec.pulse_current
                if spec.charge_neutral:
                    sign = -sign
    np.clip(current, -spec.amplitude, spec.amplitude, out=current)
    times = spec.dt * np.arange(n)
    return DriveCycle(times, current, np.full(n, spec.t_amb), max_current=spec.amplitude)


def composite_cycle(specs: Sequence[ProfileSpec], seed=None) -> DriveCycle:
    """Concatenate several synthetic segments, e.g. at different ambient temperatures."""
    seeds = np.random.SeedSequence(seed).spawn(len(specs))
    return DriveCycle.concatenate(
        [synth_profile(s, np.random.default_rng(ss)) for s, ss in zip(specs, seeds)]
    )


# Four operating temperatures, in the order the segments are chained.
STANDARD_TEMPERATURES = (313.0, 298.0, 283.0, 303.0)


def standard_design(segment_s: float = 3600.0, dt: float = 1.0, **overrides) -> list[ProfileSpec]:
    """Identification design: one segment per standard ambient temperature.

    Each segment mixes full-duty 4 A square-wave blocks (alternating sign
    every 120 s) with filtered random blocks; the square waves excite the
    ohmic and RC dynamics strongly while the random blocks break up the
    periodicity.
    """
    kw = dict(amplitude=4.0, pulse_current=4.0, duty=1.0, random_fraction=0.3)
    kw.update(overrides)
    return [ProfileSpec(segment_s, dt=dt, t_amb=t, **kw) for t in STANDARD_TEMPERATURES]
