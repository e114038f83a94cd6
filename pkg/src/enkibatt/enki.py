"""Ensemble Kalman inversion with adaptive likelihood tempering.

The solver evolves an ensemble of parameter vectors through a sequence of
tempered Kalman-type updates

    theta_i <- theta_i + C_tY (C_YY + R / alpha)^-1 (Y_obs - Y_i)

where the tempering steps ``alpha`` are chosen by a data-misfit controller
and sum to one. Everything here works on ``(M, p)`` parameter arrays and
``(M, d)`` predicted-output arrays; :func:`run_identification` plugs in the
battery forward simulator.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .models import CellConstants, get_model
from .simulator import DriveCycle, MeasurementSeries, NoiseSpec, simulate, stack

logger = logging.getLogger(__name__)


class EnsembleCollapseError(RuntimeError):
    """Fewer than two usable members remain."""


class IdentificationError(RuntimeError):
    """The identification run had to be aborted."""

    def __init__(self, message, iteration=None, diagnostics=None):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``N(mean, cov)`` with optional per-entry positivity floor."""

    mean: np.ndarray
    cov: np.ndarray
    floor: np.ndarray | None = None
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("prior mean must be 1-D and cov square of matching size")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("prior mean and covariance must be finite")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise ValueError("prior covariance must be symmetric")
        eig = np.linalg.eigvalsh(cov) if cov.size else np.zeros(0)
        if eig.size and eig.min() < -1e-12 * max(1.0, eig.max()):
            bad = [
                self._label(i) for i in range(mean.size) if cov[i, i] < 0
            ] or ["<off-diagonal>"]
            raise ValueError(f"prior covariance is not positive semidefinite ({', '.join(bad)})")
        floor = None
        if self.floor is not None:
            floor = np.broadcast_to(np.asarray(self.floor, dtype=float), mean.shape).copy()
            if np.any(floor < 0):
                raise ValueError("positivity floors must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "floor", floor)

    def _label(self, i):
        return self.names[i] if self.names else f"entry {i}"

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_reference(
        cls,
        theta_ref,
        offset: float = 0.3,
        spread: float = 0.2,
        seed=None,
        floor_fraction: float | None = 1e-6,
        names=None,
    ) -> "PriorSpec":
        """Perturbed-truth prior used in synthetic studies.

        ``mean = theta_ref + offset * diag(theta_ref) eps`` with
        ``eps ~ N(0, I)`` and ``cov = diag((spread * theta_ref)**2)``.
        """
        ref = np.asarray(theta_ref, dtype=float)
        eps = np.random.default_rng(seed).standard_normal(ref.size)
        mean = ref + offset * ref * eps
        floor = None if floor_fraction is None else floor_fraction * np.abs(ref)
        return cls(mean, (spread * ref) ** 2, floor=floor, names=names)


@dataclass
class Ensemble:
    """Parameter members with their (optional) predicted stacked outputs."""

    theta: np.ndarray
    outputs: np.ndarray | None = None
    iteration: int = 0
    failed: np.ndarray | None = None
    range_violation: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        m = self.theta.shape[0]
        if m < 2:
            raise ValueError("an ensemble needs at least two members")
        if self.outputs is not None:
            self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
            if self.outputs.shape[0] != m:
                raise ValueError("theta and outputs must have the same number of members")
        if self.failed is None:
            self.failed = np.zeros(m, dtype=bool)
        if self.range_violation is None:
            self.range_violation = np.zeros(m, dtype=bool)

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def healthy(self) -> np.ndarray:
        return ~np.asarray(self.failed, dtype=bool)

    def mean(self) -> np.ndarray:
        return self.theta.mean(axis=0)


@dataclass
class EnsembleStats:
    """Empirical moments held in anomaly form.

    ``theta_anom`` (p, M) and ``y_anom`` (d, M) are deviations from the mean
    scaled by ``1/sqrt(M-1)``, so ``C_tt = A A^T`` etc.
    """

    theta_mean: np.ndarray
    y_mean: np.ndarray | None
    theta_anom: np.ndarray
    y_anom: np.ndarray | None

    @property
    def c_tt(self) -> np.ndarray:
        return self.theta_anom @ self.theta_anom.T

    @property
    def c_ty(self) -> np.ndarray:
        return self.theta_anom @ self.y_anom.T

    @property
    def c_yy(self) -> np.ndarray:
        return self.y_anom @ self.y_anom.T


def ensemble_stats(ens: Ensemble) -> EnsembleStats:
    """Means and 1/(M-1)-normalized anomalies over the healthy members."""
    ok = ens.healthy
    m = int(ok.sum())
    if m < 2:
        raise EnsembleCollapseError(f"only {m} healthy ensemble member(s) left")
    th = ens.theta[ok]
    th_mean = th.mean(axis=0)
    scale = 1.0 / math.sqrt(m - 1)
    th_anom = (th - th_mean).T * scale
    if ens.outputs is None:
        return EnsembleStats(th_mean, None, th_anom, None)
    y = ens.outputs[ok]
    y_mean = y.mean(axis=0)
    return EnsembleStats(th_mean, y_mean, th_anom, (y - y_mean).T * scale)


def _as_diag(r, d):
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        return np.full(d, float(r))
    if r.ndim == 1:
        if r.size != d:
            raise ValueError(f"noise covariance diagonal has length {r.size}, expected {d}")
        return r
    return None


def misfit(y_obs, y_pred, r) -> np.ndarray | float:
    """Half-weighted quadratic data misfit ``0.5 (y - g)^T R^-1 (y - g)``.

    ``y_pred`` may hold one prediction or one per row. ``r`` is a scalar, the
    diagonal of R, or a full matrix.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    res = y_obs - np.asarray(y_pred, dtype=float)
    d = y_obs.shape[-1]
    diag = _as_diag(r, d)
    if diag is not None:
        if np.any(diag <= 0):
            raise np.linalg.LinAlgError("noise covariance must be positive definite")
        return 0.5 * np.sum(res * res / diag, axis=-1)
    r = np.asarray(r, dtype=float)
    try:
        cf = linalg.cho_factor(r)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("noise covariance is singular") from exc
    sol = linalg.cho_solve(cf, np.atleast_2d(res).T)
    out = 0.5 * np.sum(np.atleast_2d(res).T * sol, axis=0)
    return out if res.ndim > 1 else float(out[0])


@dataclass
class TemperState:
    """Tempering steps taken so far; ``t`` is their exact running sum."""

    alphas: list[float] = field(default_factory=list)
    complete: bool = False

    @property
    def t(self) -> float:
        return 1.0 if self.complete else math.fsum(self.alphas)

    @property
    def remaining(self) -> float:
        return 0.0 if self.complete else 1.0 - self.t


def dmc_alpha(
    misfits: Sequence[float],
    n_steps: int,
    temper: TemperState,
    *,
    variance_form: str = "direct",
) -> float | None:
    """Pick the next tempering step with the data-misfit controller.

    ``alpha = min(max(H / (2 mean), H / (2 var)), 1 - t)`` where ``H`` is the
    scale passed as ``n_steps`` and ``mean``/``var`` are the ensemble misfit
    mean and (unbiased) variance. ``variance_form="sqrt"`` uses
    ``sqrt(H / (2 var))`` instead. A zero mean or variance makes its term
    infinite. Returns ``None`` once tempering has reached ``t = 1``; otherwise
    ``temper`` is advanced in place.
    """
    if temper.complete or temper.t >= 1.0:
        temper.complete = True
        return None
    phi = np.asarray(misfits, dtype=float)
    if phi.size < 2:
        raise ValueError("need at least two misfits")
    if not np.all(np.isfinite(phi)):
        raise ValueError("misfits must be finite")
    mean = float(phi.mean())
    var = float(phi.var(ddof=1))
    h = float(n_steps)
    mean_term = math.inf if mean == 0 else h / (2.0 * mean)
    if var == 0:
        var_term = math.inf
    elif variance_form == "direct":
        var_term = h / (2.0 * var)
    elif variance_form == "sqrt":
        var_term = math.sqrt(h / (2.0 * var))
    else:
        raise ValueError(f"unknown variance_form {variance_form!r}")
    remaining = temper.remaining
    proposed = max(mean_term, var_term)
    if proposed >= remaining:
        alpha = remaining
        temper.alphas.append(alpha)
        temper.complete = True
    else:
        alpha = proposed
        temper.alphas.append(alpha)
    return alpha


def _subspace_increments(stats: EnsembleStats, innovations, r_diag, alpha):
    """Kalman increments for every innovation row, solved in ensemble space.

    With Gamma = R / alpha and the anomaly factor C_YY = A A^T,
    C_tY (A A^T + Gamma)^-1 = T (I + A^T Gamma^-1 A)^-1 A^T Gamma^-1
    which needs only an M x M factorization.
    """
    gamma_inv = alpha / r_diag
    a = stats.y_anom
    m = a.shape[1]
    scaled = a * gamma_inv[:, None]
    s = a.T @ scaled
    s = 0.5 * (s + s.T)
    rhs = scaled.T @ np.asarray(innovations).T
    eye = np.eye(m)
    jitter = 0.0
    for attempt in range(4):
        try:
            cf = linalg.cho_factor(eye * (1.0 + jitter) + s, lower=True)
            break
        except linalg.LinAlgError:
            jitter = 1e-10 * 10 ** (3 * attempt) * max(1.0, np.trace(s) / m)
            logger.warning("ensemble-space system ill-conditioned; retrying with jitter %g", jitter)
    else:
        raise np.linalg.LinAlgError("ensemble-space Kalman system could not be factorized")
    return (stats.theta_anom @ linalg.cho_solve(cf, rhs)).T


def enki_update(
    ens: Ensemble,
    stats: EnsembleStats,
    y_obs,
    r,
    alpha: float,
    floor=None,
    obs_perturbation=None,
) -> Ensemble:
    """Move every member by the tempered Kalman gain times its innovation."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if ens.outputs is None or stats.y_anom is None:
        raise ValueError("ensemble has no predicted outputs")
    y_obs = np.asarray(y_obs, dtype=float)
    d = y_obs.size
    r_diag = _as_diag(r, d)
    if r_diag is None:
        raise ValueError("enki_update expects a diagonal noise covariance")
    if np.any(r_diag <= 0):
        raise np.linalg.LinAlgError("noise covariance must be positive definite")
    if ens.outputs.shape[1] != d or stats.theta_mean.size != ens.theta.shape[1]:
        raise ValueError("dimension mismatch between ensemble and data")
    innovations = y_obs - ens.outputs
    if obs_perturbation is not None:
        innovations = innovations + obs_perturbation
    delta = _subspace_increments(stats, innovations, r_diag, alpha)
    theta = ens.theta + delta
    if floor is not None:
        theta = np.maximum(theta, floor)
    return Ensemble(theta, None, ens.iteration + 1)


def dense_gain(stats: EnsembleStats, r, alpha: float = 1.0) -> np.ndarray:
    """Kalman gain from the materialized ``C_YY + R / alpha`` (reference path)."""
    c_yy = stats.c_yy
    r = np.asarray(r, dtype=float)
    cov = c_yy + (np.diag(_as_diag(r, c_yy.shape[0])) if r.ndim < 2 else r) / alpha
    return np.linalg.solve(cov, stats.c_ty.T).T


def gaussian_condition(theta_mean, y_mean, c_tt, c_ty, c_yy, y_obs, r):
    """Condition a joint Gaussian on ``Y = y_obs``; returns ``(m, P)``."""
    c_ty = np.atleast_2d(c_ty)
    c_yy = np.atleast_2d(c_yy)
    r = np.asarray(r, dtype=float)
    s = c_yy + (np.diag(_as_diag(r, c_yy.shape[0])) if r.ndim < 2 else r)
    gain = np.linalg.solve(s, c_ty.T).T
    m = np.asarray(theta_mean, float) + gain @ (np.atleast_1d(y_obs) - np.atleast_1d(y_mean))
    p = np.atleast_2d(c_tt) - gain @ c_ty.T
    return m, p


def single_shot_update(ens: Ensemble, y_obs, r):
    """One global Gaussian conditioning step from the ensemble moments."""
    st = ensemble_stats(ens)
    return gaussian_condition(st.theta_mean, st.y_mean, st.c_tt, st.c_ty, st.c_yy, y_obs, r)


def draw_prior_ensemble(prior: PriorSpec, n_members: int, seed=None) -> Ensemble:
    """I.i.d. Gaussian draws from the prior, raised to the positivity floor."""
    if n_members < 2:
        raise ValueError("an ensemble needs at least two members")
    rng = np.random.default_rng(seed)
    # eigh tolerates singular (including all-zero) covariances
    w, v = np.linalg.eigh(prior.cov)
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    z = rng.standard_normal((n_members, prior.dim))
    theta = prior.mean + z @ factor.T
    if prior.floor is not None:
        theta = np.maximum(theta, prior.floor)
    return Ensemble(theta)


def quarantine_member(ens: Ensemble, index, seed=None, floor=None) -> Ensemble:
    """Redraw failed members from N(mean, C_tt) of the healthy ones."""
    idx = np.atleast_1d(np.asarray(index, dtype=int))
    if idx.size == 0:
        return ens
    failed = ens.failed.copy()
    failed[idx] = True
    ok = ~failed
    if not ok.any():
        raise EnsembleCollapseError("all ensemble members failed")
    healthy = ens.theta[ok]
    mean = healthy.mean(axis=0)
    anom = (healthy - mean) / math.sqrt(max(healthy.shape[0] - 1, 1))
    rng = np.random.default_rng(seed)
    theta = ens.theta.copy()
    z = rng.standard_normal((idx.size, anom.shape[0]))
    theta[idx] = mean + z @ anom
    if floor is not None:
        theta[idx] = np.maximum(theta[idx], floor)
    for i in idx:
        logger.info("iteration %d: member %d redrawn from healthy ensemble", ens.iteration, i)
    failed[idx] = False
    outputs = None if ens.outputs is None else ens.outputs.copy()
    if outputs is not None:
        outputs[idx] = np.nan
    return Ensemble(theta, outputs, ens.iteration, failed, ens.range_violation.copy())


def boxplot_stats(values) -> dict:
    """Tukey boxplot summary (1.5 IQR whiskers) of a 1-D sample."""
    x = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    return {
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "whisker_low": float(inside.min()) if inside.size else float(q1),
        "whisker_high": float(inside.max()) if inside.size else float(q3),
        "mean": float(x.mean()),
        "outliers": [float(v) for v in x[(x < lo_fence) | (x > hi_fence)]],
    }


@dataclass
class IterationRecord:
    iteration: int
    alpha: float | None
    t: float
    misfit_mean: float
    misfit_var: float
    boxplots: dict
    n_failed: int = 0
    n_range_violations: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "alpha": self.alpha,
            "t": self.t,
            "misfit_mean": self.misfit_mean,
            "misfit_var": self.misfit_var,
            "n_failed": self.n_failed,
            "n_range_violations": self.n_range_violations,
            "boxplots": self.boxplots,
        }

    @classmethod
    def from_dict(cls, d) -> "IterationRecord":
        return cls(
            d["iteration"], d["alpha"], d["t"], d["misfit_mean"], d["misfit_var"],
            d["boxplots"], d.get("n_failed", 0), d.get("n_range_violations", 0),
        )


@dataclass
class EnKIResult:
    theta_hat: np.ndarray
    records: list[IterationRecord]
    ensemble: Ensemble
    temper: TemperState
    param_names: tuple[str, ...]
    final_boxplots: dict

    @property
    def complete(self) -> bool:
        return self.temper.complete

    @property
    def alphas(self) -> list[float]:
        return list(self.temper.alphas)

    @property
    def n_iterations(self) -> int:
        return len(self.records)


def member_seed(seed, iteration: int, member: int, stream: int = 0) -> np.random.SeedSequence:
    """Independent random stream for one (iteration, member) pair."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(stream, iteration, member))


PERTURBATION_MODES = ("tempered", "predictions", "none")


def _boxplots(theta, names):
    return {name: boxplot_stats(theta[:, j]) for j, name in enumerate(names)}


def enki(
    forward: Callable,
    y_obs,
    r_diag,
    prior: PriorSpec,
    *,
    n_members: int = 200,
    max_iter: int = 20,
    seed=0,
    dmc_scale: float | None = None,
    variance_form: str = "direct",
    perturb: str = "tempered",
    misfit_on: str = "forward",
    positivity: str = "floor",
    param_names: Sequence[str] | None = None,
    max_redraws: int = 5,
) -> EnKIResult:
    """Generic tempered ensemble Kalman inversion driver.

    ``forward(theta) -> (G, failed, range_violation)`` maps an ``(M, p)``
    array to noiseless predictions ``(M, d)`` plus per-member flags. Each
    iteration forward-propagates all members, replaces diverged ones, picks
    ``alpha`` with the misfit controller and applies the Kalman update. It
    stops once the tempering sum reaches one or after ``max_iter`` iterations
    (then ``result.complete`` is False). ``dmc_scale`` is the ``H`` in the
    controller and defaults to half the data dimension.

    ``perturb`` chooses how fresh measurement noise enters each iteration:

    ``"tempered"``
        covariances come from the noiseless predictions and every member's
        innovation gets its own ``N(0, R / alpha)`` draw, so the spread after
        all iterations matches the posterior.
    ``"predictions"``
        each member's predictions get ``N(0, R)`` added and those perturbed
        predictions feed both the covariances and the innovations.
    ``"none"``
        deterministic update with no noise, useful for debugging.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    d = y_obs.size
    r_diag = np.asarray(_as_diag(r_diag, d), dtype=float)
    if np.any(r_diag <= 0):
        raise np.linalg.LinAlgError("noise covariance must be positive definite")
    if dmc_scale is None:
        dmc_scale = d / 2
    if perturb not in PERTURBATION_MODES:
        raise ValueError(f"perturb must be one of {PERTURBATION_MODES}, got {perturb!r}")
    if misfit_on not in ("forward", "perturbed"):
        raise ValueError("misfit_on must be 'forward' or 'perturbed'")
    if positivity not in ("floor", "log", "none"):
        raise ValueError("positivity must be 'floor', 'log' or 'none'")
    names = tuple(param_names) if param_names else tuple(f"theta{j}" for j in range(prior.dim))
    log_mode = positivity == "log"
    floor = prior.floor if positivity == "floor" else None

    ens = draw_prior_ensemble(prior, n_members, np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    if log_mode:
        lo = prior.floor if prior.floor is not None else np.full(prior.dim, 1e-300)
        ens = Ensemble(np.log(np.maximum(ens.theta, np.maximum(lo, 1e-300))))

    def physical(z):
        return np.exp(z) if log_mode else z

    sqrt_r = np.sqrt(r_diag)
    temper = TemperState()
    records: list[IterationRecord] = []
    for it in range(max_iter):
        g, failed, rng_flags = forward(physical(ens.theta))
        failed = np.asarray(failed, dtype=bool).copy()
        n_failed = int(failed.sum())
        redraws = 0
        while failed.any():
            n_bad = int(failed.sum())
            if n_bad > n_members // 2:
                raise IdentificationError(
                    f"{n_bad} of {n_members} members failed in iteration {it + 1}",
                    iteration=it + 1,
                    diagnostics={"failed_members": np.nonzero(failed)[0].tolist()},
                )
            if redraws >= max_redraws:
                raise IdentificationError(
                    f"members kept diverging after {max_redraws} redraws in iteration {it + 1}",
                    iteration=it + 1,
                    diagnostics={"failed_members": np.nonzero(failed)[0].tolist()},
                )
            bad = np.nonzero(failed)[0]
            ens = Ensemble(ens.theta, None, it, failed)
            ens = quarantine_member(
                ens, bad, member_seed(seed, it, redraws, stream=3),
                floor=None if log_mode else floor,
            )
            g_bad, f_bad, r_bad = forward(physical(ens.theta[bad]))
            g = g.copy()
            g[bad] = g_bad
            rng_flags = np.asarray(rng_flags).copy()
            rng_flags[bad] = r_bad
            failed = np.zeros(n_members, dtype=bool)
            failed[bad] = f_bad
            redraws += 1
        noise = None
        if perturb != "none":
            noise = np.empty_like(g)
            for i in range(n_members):
                rng = np.random.default_rng(member_seed(seed, it, i, stream=2))
                noise[i] = rng.standard_normal(d)
        if perturb == "tempered":
            phi = misfit(y_obs, g, r_diag)
            alpha = dmc_alpha(phi, dmc_scale, temper, variance_form=variance_form)
            ens = Ensemble(ens.theta, g, it, None, np.asarray(rng_flags, dtype=bool))
            innov_shift = noise * (sqrt_r / math.sqrt(alpha))
        else:
            y_pred = g if noise is None else g + noise * sqrt_r
            phi = misfit(y_obs, g if misfit_on == "forward" else y_pred, r_diag)
            alpha = dmc_alpha(phi, dmc_scale, temper, variance_form=variance_form)
            ens = Ensemble(ens.theta, y_pred, it, None, np.asarray(rng_flags, dtype=bool))
            innov_shift = None
        records.append(
            IterationRecord(
                iteration=it + 1,
                alpha=alpha,
                t=temper.t,
                misfit_mean=float(np.mean(phi)),
                misfit_var=float(np.var(phi, ddof=1)),
                boxplots=_boxplots(physical(ens.theta), names),
                n_failed=n_failed,
                n_range_violations=int(np.sum(rng_flags)),
            )
        )
        logger.info(
            "iteration %d: alpha=%.4g t=%.4g misfit mean=%.4g", it + 1, alpha, temper.t,
            records[-1].misfit_mean,
        )
        stats = ensemble_stats(ens)
        ens = enki_update(
            ens, stats, y_obs, r_diag, alpha, floor=None if log_mode else floor,
            obs_perturbation=innov_shift,
        )
        if temper.complete:
            break
    theta_final = physical(ens.theta)
    return EnKIResult(
        theta_hat=theta_final.mean(axis=0),
        records=records,
        ensemble=Ensemble(theta_final, None, ens.iteration),
        temper=temper,
        param_names=names,
        final_boxplots=_boxplots(theta_final, names),
    )


def make_forward(model, constants, cycle: DriveCycle, substeps: int = 1, n_jobs: int = 1):
    """Battery forward map ``theta (M, p) -> stacked outputs (M, 2H)``."""
    model = get_model(model)

    def run(th):
        tr = simulate(model, th, constants, cycle, substeps=substeps, store_states=False)
        return tr.outputs.reshape(th.shape[0], -1), tr.failed, tr.range_violation

    def forward(theta):
        theta = np.atleast_2d(theta)
        if n_jobs <= 1 or theta.shape[0] < 2 * n_jobs:
            return run(theta)
        chunks = np.array_split(np.arange(theta.shape[0]), n_jobs)
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda idx: run(theta[idx]), chunks))
        return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))

    return forward


def run_identification(
    model,
    cycle: DriveCycle,
    measurements: MeasurementSeries,
    prior: PriorSpec,
    noise: NoiseSpec,
    *,
    constants: CellConstants | None = None,
    n_members: int = 200,
    max_iter: int = 20,
    seed=0,
    substeps: int = 1,
    dmc_dimension: str = "steps",
    variance_form: str = "direct",
    perturb: str = "tempered",
    misfit_on: str = "forward",
    positivity: str = "floor",
    n_jobs: int = 1,
) -> EnKIResult:
    """Identify the parameters of ``model`` from one drive cycle and its measurements.

    Returns the ensemble mean of the final iteration as ``theta_hat`` with the
    per-iteration records. ``dmc_dimension`` selects whether the controller
    scale is the number of time steps (``"steps"``) or the stacked output
    length (``"outputs"``).
    """
    model = get_model(model)
    if len(measurements) != len(cycle):
        raise ValueError(
            f"measurement series has {len(measurements)} samples, cycle has {len(cycle)}"
        )
    if prior.dim != model.n_params:
        raise ValueError(f"prior has {prior.dim} entries, {model.name} needs {model.n_params}")
    y_obs = stack(measurements)
    h = len(cycle)
    if dmc_dimension == "steps":
        scale = h
    elif dmc_dimension == "outputs":
        scale = 2 * h
    else:
        raise ValueError("dmc_dimension must be 'steps' or 'outputs'")
    return enki(
        make_forward(model, constants, cycle, substeps=substeps, n_jobs=n_jobs),
        y_obs,
        noise.stacked_diag(h),
        prior,
        n_members=n_members,
        max_iter=max_iter,
        seed=seed,
        dmc_scale=scale,
        variance_form=variance_form,
        perturb=perturb,
        misfit_on=misfit_on,
        positivity=positivity,
        param_names=model.param_names,
    )
