"""Ensemble Kalman inversion for electro-thermal battery models."""

from .enki import (
    EnKIResult,
    Ensemble,
    IdentificationError,
    IterationRecord,
    PriorSpec,
    TemperState,
    dmc_alpha,
    enki,
    enki_update,
    ensemble_stats,
    misfit,
    quarantine_member,
    run_identification,
    single_shot_update,
)
from .estimator import EnKIBatteryIdentifier, output_rmse
from .models import (
    NDCT,
    THEVENIN,
    CellConstants,
    NdctModel,
    NdctParams,
    ThermalParams,
    TheveninModel,
    TheveninParams,
    get_model,
    nominal_params,
    pack_params,
    unpack_params,
)
from .ocv import OcvCurve
from .simulator import (
    DriveCycle,
    MeasurementSeries,
    NoiseSpec,
    ProfileSpec,
    SimulationError,
    add_noise,
    composite_cycle,
    simulate,
    stack,
    standard_design,
    synth_profile,
    unstack,
)

__version__ = "0.1.0"
