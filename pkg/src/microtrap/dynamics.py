"""Trajectory integration with loss channels.

Molecules are integrated independently with velocity Verlet under the force
-mu_eff grad|E|.  After every step the loss checks run in a fixed order:
Majorana flip, background-gas collision, then the wall/barrier rules.  All
random numbers come from the molecule's own counter-based stream keyed by
``(seed, molecule index)``, so an ensemble gives bit-identical results for
any split over workers.
"""

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numba import njit

from .geometry_fields import (
    C_EPER, C_OPEN, G_APHI, G_APLO, G_APWALL, G_GAP, G_LX, G_W,
    FieldModel, FieldSample, TrapGeometry, barrier_peak, field_eval, field_eval_fd, pack_geometry,
)
from .rng import LANE_DYNAMICS, Stream, counter_uniform, stream_key
from .schedule import N_ELECTRODE_FIELDS, ElectrodeConfig, RampSchedule
from .stark import CH3F

log = logging.getLogger(__name__)

HBAR = 1.054571817e-34
DEFAULT_DT = 1e-6
_INV_E = math.exp(-1.0)


class Status(IntEnum):
    ALIVE = 0
    LOST_MAJORANA = 1
    LOST_LEAK = 2
    LOST_BACKGROUND = 3
    LOST_BARRIER = 4
    DETECTED = 5

    @property
    def label(self) -> str:
        return self.name.lower()


LOSS_STATUSES = (Status.LOST_MAJORANA, Status.LOST_LEAK, Status.LOST_BACKGROUND, Status.LOST_BARRIER)


@dataclass
class MoleculeState:
    pos: np.ndarray
    vel: np.ndarray
    mu_eff: float
    status: Status = Status.ALIVE
    t_loss: float | None = None
    index: int = 0
    rng_counter: int = 0
    exit_speed: float | None = None

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64).copy()
        self.vel = np.asarray(self.vel, dtype=np.float64).copy()
        self.status = Status(self.status)

    @property
    def alive(self) -> bool:
        return self.status == Status.ALIVE


@dataclass(frozen=True)
class LossModelConfig:
    majorana_mode: str = "threshold"
    e_critical: float = 2e3
    xi_critical: float = 1.0
    background_rate: float = 0.0
    leak_probability: float = 0.0

    def __post_init__(self):
        if self.majorana_mode not in ("threshold", "adiabaticity"):
            raise ValueError("majorana_mode must be 'threshold' or 'adiabaticity'")
        if min(self.e_critical, self.xi_critical, self.background_rate, self.leak_probability) < 0:
            raise ValueError("loss parameters must be non-negative")
        if self.leak_probability > 1:
            raise ValueError("leak_probability must be <= 1")

    @classmethod
    def lossless(cls) -> "LossModelConfig":
        return cls(e_critical=0.0)

    def as_array(self) -> np.ndarray:
        mode = 0.0 if self.majorana_mode == "threshold" else 1.0
        return np.array([mode, self.e_critical, self.xi_critical, self.background_rate, self.leak_probability])


@dataclass
class Ensemble:
    """Struct-of-arrays molecule ensemble; row i is molecule ``index[i]``."""

    pos: np.ndarray
    vel: np.ndarray
    mu: np.ndarray
    status: np.ndarray = None
    t_loss: np.ndarray = None
    index: np.ndarray = None
    rng_counter: np.ndarray = None
    exit_speed: np.ndarray = None

    def __post_init__(self):
        n = len(self.mu)
        self.pos = np.ascontiguousarray(self.pos, dtype=np.float64).reshape(n, 3)
        self.vel = np.ascontiguousarray(self.vel, dtype=np.float64).reshape(n, 3)
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.status = np.zeros(n, np.int64) if self.status is None else np.asarray(self.status, np.int64)
        self.t_loss = np.full(n, np.nan) if self.t_loss is None else np.asarray(self.t_loss, np.float64)
        self.index = np.arange(n, dtype=np.int64) if self.index is None else np.asarray(self.index, np.int64)
        self.rng_counter = np.zeros(n, np.int64) if self.rng_counter is None else np.asarray(self.rng_counter, np.int64)
        self.exit_speed = np.full(n, np.nan) if self.exit_speed is None else np.asarray(self.exit_speed, np.float64)

    def __len__(self):
        return len(self.mu)

    def copy(self) -> "Ensemble":
        return Ensemble(self.pos.copy(), self.vel.copy(), self.mu.copy(), self.status.copy(), self.t_loss.copy(),
                        self.index.copy(), self.rng_counter.copy(), self.exit_speed.copy())

    def subset(self, mask) -> "Ensemble":
        return Ensemble(self.pos[mask], self.vel[mask], self.mu[mask], self.status[mask], self.t_loss[mask],
                        self.index[mask], self.rng_counter[mask], self.exit_speed[mask])

    @property
    def alive(self) -> np.ndarray:
        return self.status == Status.ALIVE

    def counts(self) -> dict:
        return {s.label: int(np.sum(self.status == s)) for s in Status}

    @classmethod
    def from_states(cls, states) -> "Ensemble":
        states = list(states)
        if not states:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
        return cls(
            np.array([s.pos for s in states]), np.array([s.vel for s in states]),
            np.array([s.mu_eff for s in states]), np.array([int(s.status) for s in states]),
            np.array([np.nan if s.t_loss is None else s.t_loss for s in states]),
            np.array([s.index for s in states]), np.array([s.rng_counter for s in states]),
            np.array([np.nan if s.exit_speed is None else s.exit_speed for s in states]),
        )

    def to_states(self) -> list:
        out = []
        for i in range(len(self)):
            out.append(MoleculeState(
                self.pos[i], self.vel[i], float(self.mu[i]), Status(int(self.status[i])),
                None if np.isnan(self.t_loss[i]) else float(self.t_loss[i]), int(self.index[i]),
                int(self.rng_counter[i]), None if np.isnan(self.exit_speed[i]) else float(self.exit_speed[i]),
            ))
        return out


# ---------------------------------------------------------------------------
# compiled core

@njit(cache=True, nogil=True, inline='always')
def _schedule_eval(t, times, values, seg, cfg):
    """Fills cfg with the schedule at time t; returns the segment index hint."""
    nb = times.shape[0]
    if nb == 1 or t <= times[0]:
        for j in range(cfg.shape[0]):
            cfg[j] = values[0, j]
        return 0
    while seg + 1 < nb and times[seg + 1] <= t:
        seg += 1
    if seg == nb - 1:
        for j in range(cfg.shape[0]):
            cfg[j] = values[nb - 1, j]
        return seg
    w = (t - times[seg]) / (times[seg + 1] - times[seg])
    for j in range(cfg.shape[0]):
        cfg[j] = values[seg, j] + w * (values[seg + 1, j] - values[seg, j])
    return seg


@njit(cache=True, nogil=True, inline='always')
def _field(x, y, z, cfg, geo, n_harm, soft, use_fd, h):
    if use_fd:
        return field_eval_fd(x, y, z, cfg, geo, n_harm, soft, h)
    return field_eval(x, y, z, cfg, geo, n_harm, soft)


@njit(cache=True, nogil=True)
def _check_losses(x, y, z, vx, vy, vz, mu, mass, fnew, fprev, dt, cfg, geo, soft, loss, key, ctr):
    """Loss rules after one step.

    ``fnew``/``fprev`` hold (Ex, Ey, Ez, E_perimeter, |E|, barrier) after and
    before the step.  Returns (status, counter, x, y, z, vx, vy, vz,
    reflected, exit_speed).
    """
    # Majorana flip
    if loss[0] == 0.0:
        if fnew[4] < loss[1]:
            return 1, ctr, x, y, z, vx, vy, vz, False, np.nan
    else:
        if fnew[4] <= 0.0:
            return 1, ctr, x, y, z, vx, vy, vz, False, np.nan
        if fprev[4] > 0.0:
            dot = fnew[0] * fprev[0] + fnew[1] * fprev[1] + fnew[2] * fprev[2] + fnew[3] * fprev[3]
            c = dot / (fnew[4] * fprev[4])
            c = min(1.0, max(-1.0, c))
            xi = HBAR * math.acos(c) / dt / (mu * fnew[4])
            if xi > loss[2]:
                return 1, ctr, x, y, z, vx, vy, vz, False, np.nan

    # background gas
    if loss[3] > 0.0:
        u = counter_uniform(key, ctr)
        ctr += 1
        if u < -math.expm1(-loss[3] * dt):
            return 3, ctr, x, y, z, vx, vy, vz, False, np.nan

    # plates and perimeter
    gap = geo[G_GAP]
    if z <= 0.0 or z >= gap:
        return 4, ctr, x, y, z, vx, vy, vz, False, np.nan

    lx = geo[G_LX]
    wy = geo[G_W]
    encounter = soft != 0 and fprev[5] < cfg[C_EPER] * _INV_E <= fnew[5]
    if 0.0 <= x <= lx and 0.0 <= y <= wy and not encounter:
        return 0, ctr, x, y, z, vx, vy, vz, False, np.nan
    reflected = False
    for wall in range(4):
        if wall == 0:
            out = x < 0.0
        elif wall == 1:
            out = x > lx
        elif wall == 2:
            out = y < 0.0
        else:
            out = y > wy
        if not out:
            continue
        u_along = y if wall < 2 else x
        if wall == 0:
            vn = -vx
        elif wall == 1:
            vn = vx
        elif wall == 2:
            vn = -vy
        else:
            vn = vy
        if (wall == int(geo[G_APWALL]) and cfg[C_OPEN] >= 0.5
                and geo[G_APLO] <= u_along <= geo[G_APHI]):
            return 5, ctr, x, y, z, vx, vy, vz, False, vn
        if soft != 0:
            return 4, ctr, x, y, z, vx, vy, vz, False, np.nan
        # hard wall: compare normal kinetic energy with the barrier height
        if wall == 0:
            px, py = 0.0, y
        elif wall == 1:
            px, py = lx, y
        elif wall == 2:
            px, py = x, 0.0
        else:
            px, py = x, wy
        peak = barrier_peak(px, py, wall, cfg, geo)
        if 0.5 * mass * vn * vn >= mu * peak:
            return 4, ctr, x, y, z, vx, vy, vz, False, np.nan
        if wall == 0:
            x, vx = -x, -vx
        elif wall == 1:
            x, vx = 2.0 * lx - x, -vx
        elif wall == 2:
            y, vy = -y, -vy
        else:
            y, vy = 2.0 * wy - y, -vy
        reflected = True
        encounter = True

    if encounter and loss[4] > 0.0:
        u = counter_uniform(key, ctr)
        ctr += 1
        if u < loss[4]:
            return 2, ctr, x, y, z, vx, vy, vz, reflected, np.nan
    return 0, ctr, x, y, z, vx, vy, vz, reflected, np.nan


@njit(cache=True, nogil=True, inline='always')
def _verlet(x, y, z, vx, vy, vz, ax, ay, az, mu, mass, dt, cfg1, geo, n_harm, soft, use_fd, h):
    """Kick-drift-kick from cached acceleration; cfg1 is the config at t + dt."""
    hdt = 0.5 * dt
    vx += hdt * ax
    vy += hdt * ay
    vz += hdt * az
    x += dt * vx
    y += dt * vy
    z += dt * vz
    r = _field(x, y, z, cfg1, geo, n_harm, soft, use_fd, h)
    k = -mu / mass
    ax = k * r[5]
    ay = k * r[6]
    az = k * r[7]
    vx += hdt * ax
    vy += hdt * ay
    vz += hdt * az
    return x, y, z, vx, vy, vz, ax, ay, az, r


@njit(cache=True, nogil=True)
def _integrate(pos, vel, mu, status, t_loss, counter, exit_speed, index, mass,
               times, values, geo, n_harm, soft, use_fd, h, loss, dt, t0, n_steps, seed,
               snap_steps, snap_pos, snap_vel, snap_status, snap_offset):
    """Integrates rows of the ensemble in place; returns dt-guard violations."""
    n_snap = snap_steps.shape[0]
    guard = 0
    cfg = np.empty(values.shape[1])
    fnew = np.empty(6)
    fprev = np.empty(6)
    for i in range(pos.shape[0]):
        x, y, z = pos[i, 0], pos[i, 1], pos[i, 2]
        vx, vy, vz = vel[i, 0], vel[i, 1], vel[i, 2]
        m = mu[i]
        st = status[i]
        js = 0
        if st == 0:
            key = stream_key(seed, LANE_DYNAMICS, index[i])
            ctr = counter[i]
            seg = _schedule_eval(t0, times, values, 0, cfg)
            r = _field(x, y, z, cfg, geo, n_harm, soft, use_fd, h)
            kf = -m / mass
            ax, ay, az = kf * r[5], kf * r[6], kf * r[7]
            for j in range(5):
                fprev[j] = r[j]
            fprev[5] = r[8]
            for s in range(n_steps):
                while js < n_snap and snap_steps[js] == s:
                    row = snap_offset + i
                    snap_pos[js, row, 0] = x
                    snap_pos[js, row, 1] = y
                    snap_pos[js, row, 2] = z
                    snap_vel[js, row, 0] = vx
                    snap_vel[js, row, 1] = vy
                    snap_vel[js, row, 2] = vz
                    snap_status[js, row] = 0
                    js += 1
                t1 = t0 + (s + 1) * dt
                seg = _schedule_eval(t1, times, values, seg, cfg)
                x, y, z, vx, vy, vz, ax, ay, az, r = _verlet(
                    x, y, z, vx, vy, vz, ax, ay, az, m, mass, dt, cfg, geo, n_harm, soft, use_fd, h)
                for j in range(5):
                    fnew[j] = r[j]
                fnew[5] = r[8]
                if fprev[4] > 0.0 and abs(fnew[4] - fprev[4]) > 0.1 * fprev[4]:
                    guard += 1
                x_out, y_out = x, y
                st, ctr, x, y, z, vx, vy, vz, refl, esp = _check_losses(
                    x, y, z, vx, vy, vz, m, mass, fnew, fprev, dt, cfg, geo, soft, loss, key, ctr)
                if st != 0:
                    t_loss[i] = t1
                    exit_speed[i] = esp
                    break
                if refl:
                    # redo the closing half-kick at the mirrored position
                    vx -= 0.5 * dt * (ax if x == x_out else -ax)
                    vy -= 0.5 * dt * (ay if y == y_out else -ay)
                    vz -= 0.5 * dt * az
                    r = _field(x, y, z, cfg, geo, n_harm, soft, use_fd, h)
                    ax, ay, az = kf * r[5], kf * r[6], kf * r[7]
                    vx += 0.5 * dt * ax
                    vy += 0.5 * dt * ay
                    vz += 0.5 * dt * az
                    for j in range(5):
                        fnew[j] = r[j]
                    fnew[5] = r[8]
                for j in range(6):
                    fprev[j] = fnew[j]
            counter[i] = ctr
        while js < n_snap:
            row = snap_offset + i
            snap_pos[js, row, 0] = x
            snap_pos[js, row, 1] = y
            snap_pos[js, row, 2] = z
            snap_vel[js, row, 0] = vx
            snap_vel[js, row, 1] = vy
            snap_vel[js, row, 2] = vz
            snap_status[js, row] = st
            js += 1
        pos[i, 0], pos[i, 1], pos[i, 2] = x, y, z
        vel[i, 0], vel[i, 1], vel[i, 2] = vx, vy, vz
        status[i] = st
    return guard


# ---------------------------------------------------------------------------
# python API

def _field_tuple(state_pos, cfg_arr, geo, model):
    return np.array(_field(state_pos[0], state_pos[1], state_pos[2], cfg_arr, geo, model.n_harmonics,
                           model.perimeter_mode, model.gradient == "fd", model.fd_step))


def _sample(r) -> FieldSample:
    return FieldSample(e_vec=np.array(r[0:3]), e_perimeter=float(r[3]), e_mag=float(r[4]), grad_mag=np.array(r[5:8]),
                       barrier=float(r[8]))


def step(state: MoleculeState, t: float, dt: float, geometry: TrapGeometry, schedule: RampSchedule,
         mass: float = CH3F.mass, model: FieldModel = FieldModel()) -> MoleculeState:
    """One velocity-Verlet step from t to t + dt (no loss rules applied)."""
    if not state.alive:
        raise ValueError("cannot step a molecule that is no longer alive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    schedule.check_time(t)
    schedule.check_time(t + dt)
    geo = pack_geometry(geometry, model)
    r0 = _field_tuple(state.pos, schedule.values_at(t), geo, model)
    k = -state.mu_eff / mass
    x, y, z, vx, vy, vz, *_ = _verlet(
        *state.pos, *state.vel, k * r0[5], k * r0[6], k * r0[7], state.mu_eff, mass, dt,
        schedule.values_at(t + dt), geo, model.n_harmonics, model.perimeter_mode, model.gradient == "fd",
        model.fd_step)
    return MoleculeState([x, y, z], [vx, vy, vz], state.mu_eff, state.status, state.t_loss, state.index,
                         state.rng_counter, state.exit_speed)


def field_sample(pos, electrodes: ElectrodeConfig, geometry: TrapGeometry, model: FieldModel = FieldModel()) -> FieldSample:
    """Field at pos without the in-trap domain check (molecules may sit past a wall)."""
    return _sample(_field_tuple(np.asarray(pos, dtype=np.float64), electrodes.as_array(),
                                pack_geometry(geometry, model), model))


def check_losses(state: MoleculeState, field: FieldSample, field_prev: FieldSample, dt: float,
                 loss_config: LossModelConfig, rng_stream: Stream, *, geometry: TrapGeometry,
                 electrodes: ElectrodeConfig, t: float | None = None, mass: float = CH3F.mass,
                 model: FieldModel = FieldModel()) -> MoleculeState:
    """Applies Majorana, background and barrier rules to a freshly stepped molecule.

    ``field``/``field_prev`` are the fields at the new and the previous
    position, ``electrodes`` the configuration at the new time ``t``.
    """
    if not state.alive:
        raise ValueError("loss rules apply to alive molecules only")
    fnew = np.array([*field.components, field.e_mag, field.barrier])
    fprev = np.array([*field_prev.components, field_prev.e_mag, field_prev.barrier])
    st, ctr, x, y, z, vx, vy, vz, _, esp = _check_losses(
        *state.pos, *state.vel, state.mu_eff, mass, fnew, fprev, dt, electrodes.as_array(),
        pack_geometry(geometry, model), model.perimeter_mode, loss_config.as_array(), rng_stream.key,
        np.int64(rng_stream.counter))
    rng_stream.counter = int(ctr)
    status = Status(int(st))
    return MoleculeState(
        [x, y, z], [vx, vy, vz], state.mu_eff, status,
        t if status != Status.ALIVE else None, state.index, int(ctr),
        None if np.isnan(esp) else float(esp),
    )


@dataclass
class Propagation:
    """Result of ``propagate_ensemble``; snapshots are taken at ``snapshot_times``."""

    ensemble: Ensemble
    t_end: float
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshot_pos: np.ndarray = None
    snapshot_vel: np.ndarray = None
    snapshot_status: np.ndarray = None
    guard_violations: int = 0


def default_workers() -> int:
    return max(1, int(os.environ.get("MICROTRAP_WORKERS", "1")))


def propagate(ensemble: Ensemble, schedule: RampSchedule, geometry: TrapGeometry, loss_config: LossModelConfig,
              dt: float, t_end: float, seed: int, *, t_start: float | None = None, mass: float = CH3F.mass,
              model: FieldModel = FieldModel(), snapshot_times=(), workers: int | None = None) -> Propagation:
    """Integrates a copy of ``ensemble`` from ``t_start`` to ``t_end``.

    The number of steps is ``round((t_end - t_start) / dt)``.  Snapshot times
    are rounded to the nearest step.  Molecules are split into contiguous
    chunks over ``workers`` threads; the result does not depend on the split.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = schedule.t_start if t_start is None else float(t_start)
    if t_end < t0:
        raise ValueError("t_end must not precede t_start")
    schedule.check_time(t0)
    schedule.check_time(t_end)
    n_steps = int(round((t_end - t0) / dt))
    snap_t = np.asarray(snapshot_times, dtype=np.float64)
    snap_steps = np.clip(np.rint((snap_t - t0) / dt), 0, n_steps).astype(np.int64)
    if np.any(np.diff(snap_steps) < 0):
        raise ValueError("snapshot times must be sorted")

    ens = ensemble.copy()
    n = len(ens)
    n_snap = len(snap_steps)
    snap_pos = np.full((n_snap, n, 3), np.nan)
    snap_vel = np.full((n_snap, n, 3), np.nan)
    snap_status = np.zeros((n_snap, n), np.int64)
    geo = pack_geometry(geometry, model)
    times = np.ascontiguousarray(schedule.times)
    values = np.ascontiguousarray(schedule.values)
    loss = loss_config.as_array()
    workers = default_workers() if workers is None else max(1, int(workers))

    def run(lo, hi):
        sl = slice(lo, hi)
        pos, vel, status = ens.pos[sl].copy(), ens.vel[sl].copy(), ens.status[sl].copy()
        t_loss, counter, esp = ens.t_loss[sl].copy(), ens.rng_counter[sl].copy(), ens.exit_speed[sl].copy()
        g = _integrate(pos, vel, ens.mu[sl].copy(), status, t_loss, counter, esp, ens.index[sl].copy(), mass,
                       times, values, geo, model.n_harmonics, model.perimeter_mode, model.gradient == "fd",
                       model.fd_step, loss, dt, t0, n_steps, np.uint64(seed), snap_steps, snap_pos, snap_vel,
                       snap_status, lo)
        ens.pos[sl], ens.vel[sl], ens.status[sl] = pos, vel, status
        ens.t_loss[sl], ens.rng_counter[sl], ens.exit_speed[sl] = t_loss, counter, esp
        return g

    bounds = np.linspace(0, n, min(workers, max(n, 1)) + 1).astype(int)
    chunks = [(bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1) if bounds[k + 1] > bounds[k]]
    if workers == 1 or len(chunks) <= 1:
        guard = sum(run(lo, hi) for lo, hi in chunks)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            guard = sum(pool.map(lambda c: run(*c), chunks))
    if guard:
        log.warning("dt guard: %d steps changed |E| by more than 10%% (dt=%g s); consider a smaller dt", guard, dt)
    return Propagation(ens, t0 + n_steps * dt, snap_steps * dt + t0, snap_pos, snap_vel, snap_status, int(guard))


def propagate_ensemble(states, schedule: RampSchedule, geometry: TrapGeometry, loss_config: LossModelConfig,
                       dt: float, t_end: float, seed: int, **kwargs):
    """List-of-states front end to :func:`propagate`; returns a new list."""
    ens = Ensemble.from_states(states)
    return propagate(ens, schedule, geometry, loss_config, dt, t_end, seed, **kwargs).ensemble.to_states()


def total_energy(ens: Ensemble, t: float, schedule: RampSchedule, geometry: TrapGeometry,
                 mass: float = CH3F.mass, model: FieldModel = FieldModel()) -> np.ndarray:
    """Kinetic plus Stark energy of every molecule (J)."""
    from .geometry_fields import evaluate
    mag = evaluate(ens.pos, schedule.at(t), geometry, model)[:, 4] if len(ens) else np.zeros(0)
    return 0.5 * mass * np.sum(ens.vel ** 2, axis=1) + ens.mu * mag


def write_trajectory_dump(path, prop: Propagation) -> int:
    """CSV ``i,t,x,y,z,vx,vy,vz,status`` from the snapshots of a propagation."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "t", "x", "y", "z", "vx", "vy", "vz", "status"])
        for j, t in enumerate(prop.snapshot_times):
            for i in range(len(prop.ensemble)):
                p = prop.snapshot_pos[j, i]
                v = prop.snapshot_vel[j, i]
                w.writerow([int(prop.ensemble.index[i]), repr(float(t)), *map(repr, map(float, p)),
                            *map(repr, map(float, v)), Status(int(prop.snapshot_status[j, i])).label])
                rows += 1
    return rows
