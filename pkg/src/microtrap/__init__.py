"""Monte Carlo simulator for polar molecules in a microstructured electric trap."""

from .analysis import (
    CoolingResult, LifetimeFit, cooling_factor_and_yield, cooling_sweep, fit_exponential_lifetime,
    kinetic_temperature, mean_velocity_from_tof, optimal_cooling_factor, temperature_from_mean_velocity,
)
from .detection import DetectionGeometry, TofSignal, normalize, read_tof, transport_and_bin, write_tof
from .dynamics import Ensemble, LossModelConfig, MoleculeState, Status, propagate, propagate_ensemble
from .geometry_fields import ExitAperture, FieldModel, FieldSample, TrapGeometry, find_field_zeros, total_field
from .protocols import (
    ExperimentConfig, ExperimentReport, ProtocolConfig, SourceConfig, build_adiabatic_schedule,
    build_storage_schedule, default_electrodes, load_ensemble, run_experiment,
)
from .schedule import ElectrodeConfig, RampSchedule
from .stark import CH3F, RotState, Species, effective_dipole, trap_depth_velocity

__version__ = "0.1.0"
