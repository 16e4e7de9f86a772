"""Experiment protocols: steady-state loading, storage and adiabatic expansion.

A protocol is a voltage schedule plus a pipeline: load an ensemble, propagate
it through the schedule, hand the molecules leaving through the exit aperture
to the detector and summarise the outcome in an :class:`ExperimentReport`.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .analysis import K_B, kinetic_temperature, mean_velocity_from_signal, temperature_from_mean_velocity
from .detection import DetectionGeometry, TofSignal, transport_and_bin
from .dynamics import DEFAULT_DT, Ensemble, LossModelConfig, Status, propagate
from .geometry_fields import FieldModel, TrapGeometry, evaluate
from .rng import LANE_LOAD, uniform_block
from .schedule import MAX_PERIMETER_FIELD, ElectrodeConfig, RampSchedule, offset_voltage
from .stark import CH3F, RotState, Species, effective_dipole, trap_depth_velocity

log = logging.getLogger(__name__)

WINDOW_CONVENTION = "rising edge: t0 to the maximum bin inclusive, cumulative normalised at the maximum"


class ConfigurationError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


class AccountingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceConfig:
    flux_temperature: float = 77.0
    e_load: float = 2.0e6
    n_molecules: int = 1000
    state_mixture: tuple = ((RotState(1, 1, -1), 1.0),)

    def __post_init__(self):
        if self.flux_temperature <= 0:
            raise ConfigurationError("flux_temperature must be positive")
        if not 0 <= self.e_load <= MAX_PERIMETER_FIELD:
            raise ConfigurationError(f"e_load must lie in [0, {MAX_PERIMETER_FIELD}] V/m")
        if self.n_molecules <= 0:
            raise ConfigurationError("n_molecules must be positive")
        if not self.state_mixture:
            raise ConfigurationError("state_mixture is empty")
        w = [float(x) for _, x in self.state_mixture]
        if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigurationError("state_mixture weights must be non-negative and sum to 1")


@dataclass(frozen=True)
class ProtocolConfig:
    """Timing and field levels of a storage or adiabatic run.

    ``step_offset_region1`` is the pre-ramp offset field in region 1 (V/m);
    None means ten times the region-2 offset.  ``t_settle`` lets hot molecules
    escape through the open region-1 side before that side is closed.
    ``t_unload = 0`` ends the run at the unload trigger without a TOF.
    """

    e_load: float = 2.0e6
    e_unload: float | None = None
    t_hold: float = 1.0
    t_ramp: float = 0.0
    t_total_constraint: float = 1.1
    step_offset_region1: float | None = None
    t_switch: float = 1e-3
    t_settle: float = 20e-3
    t_unload: float = 0.5

    def __post_init__(self):
        if self.t_hold < 0 or self.t_ramp < 0:
            raise ConfigurationError("t_hold and t_ramp must be non-negative")
        if self.t_switch <= 0:
            raise ConfigurationError("t_switch must be positive")
        if self.t_settle < 0 or self.t_unload < 0:
            raise ConfigurationError("t_settle and t_unload must be non-negative")
        if not 0 < self.e_load <= MAX_PERIMETER_FIELD:
            raise ConfigurationError("e_load must lie in (0, 6e6] V/m")
        if self.unload_field < 0 or self.unload_field > MAX_PERIMETER_FIELD:
            raise ConfigurationError("e_unload must lie in [0, 6e6] V/m")

    @property
    def unload_field(self) -> float:
        return self.e_load if self.e_unload is None else self.e_unload

    def with_ramp(self, t_ramp: float) -> "ProtocolConfig":
        """Same protocol with ``t_hold`` adjusted so that t_ramp + t_hold = t_total_constraint."""
        from dataclasses import replace
        if t_ramp > self.t_total_constraint:
            raise ConfigurationError("t_ramp exceeds t_total_constraint")
        return replace(self, t_ramp=t_ramp, t_hold=self.t_total_constraint - t_ramp)


def default_electrodes(geometry: TrapGeometry = TrapGeometry(), e_peak: float = MAX_PERIMETER_FIELD,
                       e_offset: float = 1e5, wedge_bias: float = 0.05, e_plate: float | None = None) -> ElectrodeConfig:
    """Trap at full strength: perimeter barrier ``e_peak``, stripe surface field ``e_plate`` (default ``e_peak``)."""
    e_plate = e_peak if e_plate is None else e_plate
    return ElectrodeConfig(
        v_micro=e_plate * geometry.stripe_period / 4.0,
        v_offset_region1=offset_voltage(e_offset, geometry.gap_z),
        v_offset_region2=offset_voltage(e_offset, geometry.gap_z),
        e_perimeter=e_peak,
        wedge_bias=wedge_bias,
    )


def scaled(config: ElectrodeConfig, factor: float) -> ElectrodeConfig:
    """All voltages and the barrier multiplied by ``factor``; shape unchanged."""
    return config.replace(
        v_micro=config.v_micro * factor,
        v_offset_region1=config.v_offset_region1 * factor,
        v_offset_region2=config.v_offset_region2 * factor,
        e_perimeter=config.e_perimeter * factor,
    )


def _level(base: ElectrodeConfig, e_target: float) -> ElectrodeConfig:
    if base.e_perimeter <= 0:
        raise ConfigurationError("electrode_base.e_perimeter must be positive")
    if e_target > base.e_perimeter * (1 + 1e-12):
        raise ConfigurationError("loading/unloading field exceeds the peak trap field")
    return scaled(base, e_target / base.e_perimeter)


# ---------------------------------------------------------------------------
# loading

def _sample_states(source: SourceConfig, species: Species, u):
    trappable = [(s, w) for s, w in source.state_mixture if effective_dipole(species, s) > 0 and w > 0]
    if not trappable:
        raise ConfigurationError("state_mixture holds no low-field-seeking state")
    w = np.array([x for _, x in trappable])
    cdf = np.cumsum(w / w.sum())
    mus = np.array([effective_dipole(species, s) for s, _ in trappable])
    pick = np.minimum(np.searchsorted(cdf, u, side="right"), len(mus) - 1)
    return mus[pick]


def load_ensemble(source: SourceConfig, species: Species = CH3F, geometry: TrapGeometry = TrapGeometry(),
                  seed: int = 0, *, electrodes: ElectrodeConfig | None = None, model: FieldModel = FieldModel(),
                  x_range: tuple | None = None, max_attempts: int = 1000) -> Ensemble:
    """Steady-state sample of trapped molecules.

    Speeds follow the velocity-filtered effusive distribution
    p(v) ~ v^2 exp(-v^2 / 2 sigma^2) truncated at the loading trap depth
    v_max(mu_eff, e_load), with sigma^2 = k_B T / m, and isotropic directions.
    Positions are uniform in the trap (or in ``x_range``).

    If ``electrodes`` (the loading configuration) is given, the sampled speed
    is read as the speed at the field floor of the loading region; the
    molecule is placed uniformly within its energetically accessible volume
    and slowed by the Stark potential there, so the initial ensemble conserves
    energy under the loading fields.
    """
    n = int(source.n_molecules)
    if n <= 0:
        raise ConfigurationError("n_molecules must be positive")
    lo_x, hi_x = (0.0, geometry.length_x) if x_range is None else map(float, x_range)
    if not 0 <= lo_x < hi_x <= geometry.length_x:
        raise ConfigurationError("x_range must lie inside the trap")
    idx = np.arange(n, dtype=np.int64)
    u = uniform_block(seed, LANE_LOAD, idx, 7)
    mu = _sample_states(source, species, u[:, 0])

    sigma = math.sqrt(K_B * source.flux_temperature / species.mass)
    v_max = np.array([trap_depth_velocity(m, source.e_load, species.mass) for m in mu])
    dist = stats.maxwell(scale=sigma)
    speed = dist.ppf(u[:, 1] * dist.cdf(v_max))
    speed = np.where(v_max > 0, np.minimum(speed, v_max), 0.0)

    cos_t = 2.0 * u[:, 2] - 1.0
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    phi = 2.0 * math.pi * u[:, 3]
    direction = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])

    lo = np.array([lo_x, 0.0, 0.0])
    span = np.array([hi_x - lo_x, geometry.width_y, geometry.gap_z])
    pos = lo + u[:, 4:7] * span
    if electrodes is not None:
        region = 1 if hi_x <= geometry.region_split_x else 2
        floor = electrodes.offset_field(region, geometry.gap_z)
        kinetic = 0.5 * species.mass * speed ** 2
        local = np.empty(n)
        pending = np.arange(n)
        for attempt in range(max_attempts):
            mag = evaluate(pos[pending], electrodes, geometry, model)[:, 4]
            ke = kinetic[pending] - mu[pending] * (mag - floor)
            ok = ke >= 0
            local[pending[ok]] = ke[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            pos[pending] = lo + uniform_block(seed, LANE_LOAD, pending, 3, start=7 + 3 * attempt) * span
        else:
            raise ConfigurationError(f"{pending.size} molecules found no accessible position")
        speed = np.sqrt(2.0 * local / species.mass)
    return Ensemble(pos, direction * speed[:, None], mu)


# ---------------------------------------------------------------------------
# schedules

def _dedupe(points):
    out = []
    for t, c in points:
        if out and t <= out[-1][0] + 1e-12:
            out[-1] = (out[-1][0], c)
        else:
            out.append((t, c))
    return out


@dataclass(frozen=True)
class ProtocolTimes:
    """Landmarks of a built schedule (seconds)."""

    closed: float
    ramp_start: float
    ramp_end: float
    unload_trigger: float
    end: float


def build_storage_schedule(config: ProtocolConfig, electrode_base: ElectrodeConfig):
    """Load at e_load, close and boost to full fields, hold, unload.

    Returns ``(schedule, times)``.
    """
    ts = config.t_switch
    load = _level(electrode_base, config.e_load)
    full = electrode_base.replace(exit_open=0.0)
    unload = _level(electrode_base, config.unload_field).replace(exit_open=1.0)
    t_close = ts
    t_trig = t_close + config.t_hold
    pts = [(0.0, load), (t_close, full), (t_trig, full)]
    end = t_trig
    if config.t_unload > 0:
        pts += [(t_trig + ts, unload), (t_trig + ts + config.t_unload, unload)]
        end = t_trig + ts + config.t_unload
    return RampSchedule(_dedupe(pts)), ProtocolTimes(t_close, t_close, t_close, t_trig, end)


def build_adiabatic_schedule(config: ProtocolConfig, electrode_base: ElectrodeConfig,
                             geometry: TrapGeometry = TrapGeometry()):
    """Load into region 2 behind a high region-1 offset, then lower the step.

    Phases: load (region-1 side open) -> close and boost -> settle -> close
    the region-1 side -> linear ramp of the region-1 offset down to the
    region-2 offset over ``t_ramp`` -> hold ``t_hold`` -> unload.
    Returns ``(schedule, times)``.
    """
    if abs(config.t_ramp + config.t_hold - config.t_total_constraint) > 1e-9:
        raise ConfigurationError(
            f"t_ramp + t_hold = {config.t_ramp + config.t_hold} s, expected {config.t_total_constraint} s")
    ts = config.t_switch
    v2 = electrode_base.v_offset_region2
    if config.step_offset_region1 is None:
        v_step = 10.0 * v2
    else:
        v_step = offset_voltage(config.step_offset_region1, geometry.gap_z)
    stepped = electrode_base.replace(v_offset_region1=v_step, exit_open=0.0)
    open1 = stepped.replace(perimeter_scale_region1=0.0)
    closed1 = stepped.replace(perimeter_scale_region1=1.0)
    relaxed = closed1.replace(v_offset_region1=v2)
    load = _level(open1, config.e_load)
    unload = _level(relaxed, config.unload_field).replace(exit_open=1.0)

    t_close = ts
    t_settled = t_close + config.t_settle
    t_r0 = t_settled + ts
    t_r1 = t_r0 + max(config.t_ramp, 1e-9)  # a zero ramp is a near-instant step
    t_trig = t_r0 + config.t_ramp + config.t_hold
    pts = [(0.0, load), (t_close, open1), (t_settled, open1), (t_r0, closed1), (t_r1, relaxed), (t_trig, relaxed)]
    end = t_trig
    if config.t_unload > 0:
        pts += [(t_trig + ts, unload), (t_trig + ts + config.t_unload, unload)]
        end = t_trig + ts + config.t_unload
    return RampSchedule(_dedupe(pts)), ProtocolTimes(t_close, t_r0, t_r1, t_trig, end)


# ---------------------------------------------------------------------------
# experiments

@dataclass(frozen=True)
class ExperimentConfig:
    geometry: TrapGeometry = field(default_factory=TrapGeometry)
    electrode_base: ElectrodeConfig = field(default_factory=default_electrodes)
    species: Species = CH3F
    source: SourceConfig = field(default_factory=SourceConfig)
    loss: LossModelConfig = field(default_factory=LossModelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    detection: DetectionGeometry = field(default_factory=DetectionGeometry)
    model: FieldModel = field(default_factory=FieldModel)
    dt: float = DEFAULT_DT
    energy_consistent_loading: bool = True


@dataclass
class ExperimentReport:
    kind: str
    seed: int
    n_initial: int
    counts: dict
    t_hold: float
    t_ramp: float
    t_unload_trigger: float
    n_alive_at_unload: int
    temperature_pre: float
    temperature_post: float
    integrated_signal: float = 0.0
    mean_velocity_tof: float = float("nan")
    temperature_tof: float = float("nan")
    migrated_fraction: float = float("nan")
    region_population: tuple = (0, 0)
    guard_violations: int = 0
    window: str = WINDOW_CONVENTION

    def to_dict(self) -> dict:
        return asdict(self)


def check_accounting(n_initial: int, counts: dict) -> None:
    total = sum(counts.values())
    if total != n_initial:
        raise AccountingError(f"{n_initial} molecules loaded but {total} accounted for: {counts}")


def run_experiment(kind: str, config: ExperimentConfig, seed: int, workers: int | None = None):
    """Loads, propagates and detects one run; returns ``(TofSignal | None, ExperimentReport)``.

    The TOF is None when the protocol has no unload phase.
    """
    if kind not in ("storage", "adiabatic"):
        raise ConfigurationError(f"unknown experiment kind {kind!r}")
    geo, pc = config.geometry, config.protocol
    if abs(pc.e_load - config.source.e_load) > 1e-9 * max(pc.e_load, 1.0):
        raise ConfigurationError("source.e_load and protocol.e_load disagree")
    if kind == "storage":
        schedule, times = build_storage_schedule(pc, config.electrode_base)
        x_range = None
    else:
        schedule, times = build_adiabatic_schedule(pc, config.electrode_base, geo)
        x_range = (geo.region_split_x, geo.length_x)
    load_cfg = schedule.at(0.0) if config.energy_consistent_loading else None
    ens = load_ensemble(config.source, config.species, geo, seed, electrodes=load_cfg, model=config.model,
                        x_range=x_range)
    n0 = len(ens)
    snaps = [times.ramp_start, times.unload_trigger]
    try:
        prop = propagate(ens, schedule, geo, config.loss, config.dt, times.end, seed, t_start=0.0,
                         mass=config.species.mass, model=config.model, snapshot_times=snaps, workers=workers)
    except Exception as exc:
        raise ExperimentError(f"{kind} run failed (seed={seed}, t_hold={pc.t_hold}, t_ramp={pc.t_ramp}): {exc}") from exc
    out = prop.ensemble
    counts = out.counts()
    check_accounting(n0, counts)

    m = config.species.mass
    temps = []
    for j in range(2):
        alive = prop.snapshot_status[j] == Status.ALIVE
        temps.append(kinetic_temperature(prop.snapshot_vel[j][alive], m))
    alive_trig = prop.snapshot_status[1] == Status.ALIVE
    x_trig = prop.snapshot_pos[1][alive_trig, 0]
    n1 = int(np.sum(x_trig < geo.region_split_x))
    n2 = int(alive_trig.sum()) - n1
    migrated = n1 / max(n1 + n2, 1) if kind == "adiabatic" else float("nan")

    report = ExperimentReport(
        kind=kind, seed=int(seed), n_initial=n0, counts=counts, t_hold=pc.t_hold, t_ramp=pc.t_ramp,
        t_unload_trigger=times.unload_trigger, n_alive_at_unload=int(alive_trig.sum()),
        temperature_pre=temps[0], temperature_post=temps[1], migrated_fraction=migrated,
        region_population=(n1, n2), guard_violations=prop.guard_violations,
    )
    if pc.t_unload <= 0:
        return None, report
    exited = out.subset((out.status == Status.DETECTED) & (out.t_loss >= times.unload_trigger))
    signal = transport_and_bin(exited, config.detection, seed, t0=times.unload_trigger)
    report.integrated_signal = signal.total
    if signal.total > 0:
        v = mean_velocity_from_signal(signal)
        report.mean_velocity_tof = v
        report.temperature_tof = temperature_from_mean_velocity(v, m)
    return signal, report
