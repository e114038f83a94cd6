"""scikit-learn style front end for ensemble Kalman identification."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .enki import PriorSpec, run_identification
from .models import CellConstants, get_model, nominal_params, unpack_params
from .simulator import DriveCycle, MeasurementSeries, NoiseSpec, simulate


def output_rmse(measured, predicted) -> dict[str, float]:
    """Root-mean-square error of voltage and surface temperature columns."""
    m = np.asarray(measured, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if m.shape != p.shape or m.ndim != 2 or m.shape[1] != 2:
        raise ValueError("expected two (H, 2) arrays of voltage and surface temperature")
    err = np.sqrt(np.mean((m - p) ** 2, axis=0))
    return {"voltage": float(err[0]), "surf_temp": float(err[1])}


def cycle_from_array(X, t_amb: float = 298.15, max_current: float = 4.0) -> DriveCycle:
    """Columns ``time, current[, ambient temperature]`` as a :class:`DriveCycle`."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if X.shape[1] not in (2, 3):
        raise ValueError(f"X needs 2 or 3 columns (time, current[, T_amb]); got {X.shape[1]}")
    amb = X[:, 2] if X.shape[1] == 3 else np.full(X.shape[0], float(t_amb))
    return DriveCycle(X[:, 0], X[:, 1], amb, max_current=max_current)


class EnKIBatteryIdentifier(RegressorMixin, BaseEstimator):
    """Identify electro-thermal cell parameters from a drive cycle.

    ``fit(X, y)`` takes ``X`` with columns ``time_s, current_A[, amb_temp_K]``
    and ``y`` with columns ``voltage_V, surf_temp_K`` on the same uniform
    time grid. ``predict`` runs the identified model on a new drive cycle.

    Parameters
    ----------
    model : {"thevenin", "ndct"}
    n_rc : int
        Number of RC pairs for the Thevenin model.
    prior : PriorSpec or None
        When omitted the prior is built around ``reference`` (the nominal set
        if that is also omitted): the mean is the reference perturbed by
        ``prior_offset`` relative Gaussian noise and the standard deviation
        is ``prior_spread`` times the reference.
    perturbation : {"tempered", "predictions", "none"}
        How fresh measurement noise enters each iteration.
    random_state : int
        Master seed. Results do not depend on ``n_jobs``.

    Attributes
    ----------
    theta_ : ndarray
        Identified parameter vector in schema order.
    params_ : dict
        ``theta_`` keyed by parameter name.
    result_ : EnKIResult
    alphas_ : list of float
    converged_ : bool
        Whether the tempering sum reached one within ``max_iter``.
    n_iter_ : int
    """

    def __init__(
        self,
        model="thevenin",
        n_rc=1,
        n_members=200,
        max_iter=20,
        prior=None,
        reference=None,
        prior_offset=0.3,
        prior_spread=0.2,
        voltage_var=1e-4,
        temp_var=1e-3,
        constants=None,
        t_amb=298.15,
        substeps=1,
        dmc_dimension="steps",
        variance_form="direct",
        perturbation="tempered",
        misfit_on="forward",
        positivity="floor",
        n_jobs=1,
        random_state=0,
    ):
        self.model = model
        self.n_rc = n_rc
        self.n_members = n_members
        self.max_iter = max_iter
        self.prior = prior
        self.reference = reference
        self.prior_offset = prior_offset
        self.prior_spread = prior_spread
        self.voltage_var = voltage_var
        self.temp_var = temp_var
        self.constants = constants
        self.t_amb = t_amb
        self.substeps = substeps
        self.dmc_dimension = dmc_dimension
        self.variance_form = variance_form
        self.perturbation = perturbation
        self.misfit_on = misfit_on
        self.positivity = positivity
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _model(self):
        return get_model(self.model, self.n_rc)

    def _constants(self):
        return self.constants if self.constants is not None else CellConstants()

    def _seed(self) -> int:
        if self.random_state is None:
            return int(np.random.SeedSequence().entropy)
        if isinstance(self.random_state, (int, np.integer)) and self.random_state >= 0:
            return int(self.random_state)
        raise ValueError("random_state must be a non-negative integer or None")

    def build_prior(self, seed: int) -> PriorSpec:
        model = self._model()
        if self.prior is not None:
            if self.prior.dim != model.n_params:
                raise ValueError(f"prior has {self.prior.dim} entries, {model.name} needs {model.n_params}")
            return self.prior
        ref = nominal_params(model) if self.reference is None else np.asarray(self.reference, float)
        return PriorSpec.from_reference(
            ref,
            offset=self.prior_offset,
            spread=self.prior_spread,
            seed=np.random.SeedSequence(entropy=seed, spawn_key=(4,)),
            names=model.param_names,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y needs two columns: voltage and surface temperature")
        const = self._constants()
        cycle = cycle_from_array(X, self.t_amb, const.max_current)
        seed = self._seed()
        model = self._model()
        meas = MeasurementSeries(cycle.times, y[:, 0], y[:, 1])
        result = run_identification(
            model,
            cycle,
            meas,
            self.build_prior(seed),
            NoiseSpec(self.voltage_var, self.temp_var),
            constants=const,
            n_members=self.n_members,
            max_iter=self.max_iter,
            seed=seed,
            substeps=self.substeps,
            dmc_dimension=self.dmc_dimension,
            variance_form=self.variance_form,
            perturb=self.perturbation,
            misfit_on=self.misfit_on,
            positivity=self.positivity,
            n_jobs=self.n_jobs,
        )
        self.result_ = result
        self.theta_ = np.asarray(result.theta_hat, dtype=float)
        self.param_names_ = tuple(model.param_names)
        self.params_ = dict(zip(self.param_names_, self.theta_.tolist()))
        self.alphas_ = result.alphas
        self.converged_ = result.complete
        self.n_iter_ = result.n_iterations
        self.seed_ = seed
        return self

    def predict(self, X):
        """Noiseless voltage and surface temperature, shape ``(H, 2)``."""
        check_is_fitted(self, "theta_")
        const = self._constants()
        cycle = cycle_from_array(X, self.t_amb, const.max_current)
        traj = simulate(self._model(), self.theta_, const, cycle, substeps=self.substeps)
        return traj.outputs

    def rmse(self, X, y) -> dict[str, float]:
        y = check_array(y, dtype=np.float64)
        return output_rmse(y, self.predict(X))

    def named_params(self):
        """Identified parameters as the model's named dataclass."""
        check_is_fitted(self, "theta_")
        return unpack_params(self.theta_, self._model(), self._constants())
