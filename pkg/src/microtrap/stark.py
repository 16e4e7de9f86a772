"""Species data and the linear Stark interaction of a symmetric top."""

import math
from dataclasses import dataclass

import numpy as np

from .geometry_fields import FieldSample

ATOMIC_MASS = 1.66053906660e-27  # kg
DEBYE = 3.33564e-30  # C m


@dataclass(frozen=True)
class Species:
    mass: float
    dipole: float
    name: str = ""

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.dipole < 0:
            raise ValueError("dipole must be non-negative")


# 34.033 u, 1.85 D
CH3F = Species(mass=5.651e-26, dipole=6.2e-30, name="CH3F")


@dataclass(frozen=True)
class RotState:
    j: int
    k: int
    m: int

    def __post_init__(self):
        if self.j < 0 or abs(self.k) > self.j or abs(self.m) > self.j:
            raise ValueError(f"invalid rotational state (j={self.j}, k={self.k}, m={self.m})")

    @property
    def low_field_seeking(self) -> bool:
        return self.k * self.m < 0


def effective_dipole(species: Species, state: RotState) -> float:
    """Signed first-order Stark dipole; positive means low-field seeking.

    j = 0 has no linear shift and returns 0.
    """
    if state.j == 0:
        return 0.0
    return -species.dipole * state.k * state.m / (state.j * (state.j + 1))


def stark_energy(mu_eff: float, e_mag):
    return mu_eff * np.asarray(e_mag)


def stark_force(mu_eff: float, field: FieldSample) -> np.ndarray:
    return -mu_eff * np.asarray(field.grad_mag, dtype=np.float64)


def trap_depth_velocity(mu_eff: float, e_barrier: float, mass: float) -> float:
    """Largest speed a barrier of field ``e_barrier`` still turns around."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    if mu_eff < 0 or e_barrier < 0:
        raise ValueError("mu_eff and e_barrier must be non-negative")
    return math.sqrt(2.0 * mu_eff * e_barrier / mass)
