"""Electrode configuration and piecewise-linear voltage schedules."""

from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

MAX_PERIMETER_FIELD = 6.0e6  # V/m, 60 kV/cm


@dataclass(frozen=True)
class ElectrodeConfig:
    """Electrical state of the trap at one instant.

    ``perimeter_scale_region1`` multiplies the perimeter barrier over region 1
    (0 opens that side of the trap), ``exit_open`` removes the barrier over the
    exit aperture (1 = fully open).  Both interpolate like any other voltage.
    """

    v_micro: float = 0.0
    v_offset_region1: float = 0.0
    v_offset_region2: float = 0.0
    e_perimeter: float = 0.0
    wedge_bias: float = 0.0
    perimeter_scale_region1: float = 1.0
    exit_open: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.e_perimeter <= MAX_PERIMETER_FIELD * (1 + 1e-12):
            raise ValueError(f"e_perimeter must lie in [0, {MAX_PERIMETER_FIELD}] V/m, got {self.e_perimeter}")
        if self.v_micro < 0:
            raise ValueError("v_micro must be non-negative")
        if not 0.0 <= self.wedge_bias <= 1.0:
            raise ValueError("wedge_bias must lie in [0, 1]")
        if not 0.0 <= self.perimeter_scale_region1 <= 1.0:
            raise ValueError("perimeter_scale_region1 must lie in [0, 1]")
        if not 0.0 <= self.exit_open <= 1.0:
            raise ValueError("exit_open must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def replace(self, **changes) -> "ElectrodeConfig":
        return replace(self, **changes)

    def offset_field(self, region: int, gap_z: float) -> float:
        v = self.v_offset_region1 if region == 1 else self.v_offset_region2
        return 2.0 * v / gap_z


def offset_voltage(e_offset: float, gap_z: float) -> float:
    """Plate offset voltage giving a homogeneous field ``e_offset`` across ``gap_z``."""
    return 0.5 * e_offset * gap_z


N_ELECTRODE_FIELDS = len(fields(ElectrodeConfig))


class RampSchedule:
    """Voltage trajectory: breakpoints ``(t, ElectrodeConfig)``, linear in between.

    A single breakpoint describes a static configuration valid for all
    ``t >= t0``; otherwise the domain is ``[t_first, t_last]``.
    """

    def __init__(self, breakpoints: Sequence[tuple]):
        if len(breakpoints) == 0:
            raise ValueError("schedule needs at least one breakpoint")
        times = np.array([float(t) for t, _ in breakpoints])
        if np.any(np.diff(times) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")
        self.breakpoints = [(float(t), c) for t, c in breakpoints]
        self.times = times
        self.values = np.stack([c.as_array() for _, c in breakpoints])

    @classmethod
    def static(cls, config: ElectrodeConfig, t0: float = 0.0) -> "RampSchedule":
        return cls([(t0, config)])

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1]) if len(self.times) > 1 else np.inf

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def check_time(self, t: float) -> None:
        if not (self.t_start - 1e-12 <= t <= self.t_end + 1e-12):
            raise IndexError(f"t={t} outside schedule domain [{self.t_start}, {self.t_end}]")

    def values_at(self, t: float) -> np.ndarray:
        self.check_time(t)
        return np.array([np.interp(t, self.times, self.values[:, j]) for j in range(self.values.shape[1])])

    def at(self, t: float) -> ElectrodeConfig:
        v = self.values_at(t)
        names = [f.name for f in fields(ElectrodeConfig)]
        # interpolation can overshoot bounds by rounding only
        v = np.where(np.abs(v) < 1e-300, 0.0, v)
        return ElectrodeConfig(**{n: float(x) for n, x in zip(names, v)})

    def __repr__(self):
        return f"RampSchedule({len(self.breakpoints)} breakpoints, t=[{self.t_start}, {self.t_end}])"
