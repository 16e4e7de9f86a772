"""Estimators and fits: mean velocity from a TOF edge, temperature, trap
lifetime, cooling factor and cooling yield."""

import math
from dataclasses import dataclass

import numpy as np

from .detection import TofSignal, rising_edge_cumulative

K_B = 1.380649e-23


class DataError(ValueError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class LifetimeFit:
    tau: float
    tau_err: float
    amplitude: float
    residual_norm: float
    amplitude_err: float = float("nan")
    capped: bool = False
    iterations: int = 0


@dataclass(frozen=True)
class CoolingResult:
    t_ramp: float
    temperature: float
    cooling_factor: float
    yield_fraction: float


def mean_velocity_from_tof(t, s, guide_length: float) -> float:
    """<v> = L * integral of S(t)/t^2 dt for a normalised cumulative arrival curve.

    ``t``/``s`` sample S on a non-decreasing time grid (repeated times encode
    steps).  Beyond the last sample S is taken as 1 and its tail integral
    1/t_end is added exactly; before the first sample S is 0.
    """
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if t.size == 0 or not np.any(s > 0):
        return 0.0
    if t.shape != s.shape:
        raise DataError("t and S differ in length")
    if np.any(np.diff(t) < 0):
        raise DataError("time grid must be non-decreasing")
    if np.any(np.diff(s) < -1e-9):
        raise DataError("S(t) must be non-decreasing")
    first = int(np.argmax(s > 0))
    # the segment leading up to the first non-zero sample starts at S = 0
    lo = max(first - 1, 0)
    if t[lo] <= 0:
        raise ValueError("evaluation times must be positive")
    tt, ss = t[lo:], s[lo:]
    integrand = ss / tt ** 2
    body = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(tt)))
    return guide_length * (body + ss[-1] / tt[-1])


def mean_velocity_from_signal(signal: TofSignal, guide_length: float | None = None) -> float:
    """Estimator applied to the rising edge of a binned TOF signal."""
    L = signal.guide_length if guide_length is None else guide_length
    t, s = rising_edge_cumulative(signal)
    return mean_velocity_from_tof(t, s, L)


def temperature_from_mean_velocity(v_mean: float, mass: float) -> float:
    """k_B T / 2 = m <v>^2 / 2."""
    if v_mean < 0:
        raise ValueError("v_mean must be non-negative")
    return mass * v_mean ** 2 / K_B


def kinetic_temperature(vel, mass: float) -> float:
    """3D kinetic temperature m <|v|^2> / (3 k_B) of a set of velocities."""
    vel = np.asarray(vel, dtype=np.float64).reshape(-1, 3)
    if len(vel) == 0:
        return float("nan")
    return mass * float(np.mean(np.sum(vel ** 2, axis=1))) / (3 * K_B)


def fit_exponential_lifetime(points, weighting: str = "unweighted", tau_cap: float = 1e4,
                             rtol: float = 1e-10, max_iter: int = 200) -> LifetimeFit:
    """Fits A exp(-t/tau) to ``(t_hold, signal)`` pairs.

    A log-linear fit seeds a Levenberg-Marquardt refinement in (A, 1/tau).
    ``tau_err`` follows from the parameter covariance scaled by the residual
    variance.  A decay rate below ``1/tau_cap`` (including growth) returns
    ``tau = tau_cap`` with ``capped=True``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DataError("need at least 3 (t, signal) points")
    t, y = pts[:, 0], pts[:, 1]
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DataError("signals must be positive and finite")
    if weighting == "unweighted":
        w = np.ones_like(y)
    elif weighting == "poisson":
        w = 1.0 / y
    else:
        raise ValueError("weighting must be 'unweighted' or 'poisson'")
    sw = np.sqrt(w)

    slope, intercept = np.polyfit(t, np.log(y), 1, w=np.sqrt(w * y * y))
    p = np.array([math.exp(intercept), max(-slope, 0.0)])

    def residual(q):
        return sw * (q[0] * np.exp(-q[1] * t) - y)

    def jac(q):
        e = np.exp(-q[1] * t)
        return np.column_stack([sw * e, -sw * q[0] * t * e])

    r = residual(p)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(p)
        g = J.T @ r
        H = J.T @ J
        while True:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-300), -g)
            q = p + step
            rq = residual(q)
            cq = float(rq @ rq)
            if cq <= cost:
                lam = max(lam / 10, 1e-15)
                break
            lam *= 10
            if lam > 1e15:
                break
        if lam > 1e15:
            converged = True  # no downhill step left: at the minimum to rounding
            break
        change = np.abs(step) / np.maximum(np.abs(q), 1e-300)
        p, r, cost = q, rq, cq
        if np.all(change < rtol) or cost == 0.0:
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations (A={p[0]:.6g}, rate={p[1]:.6g}, cost={cost:.6g})")

    J = jac(p)
    dof = max(len(t) - 2, 1)
    s2 = cost / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.inf)
    rate, rate_err = p[1], math.sqrt(max(cov[1, 1], 0.0))
    resid_norm = math.sqrt(cost) / math.sqrt(float(np.sum(w * y * y)))
    if rate <= 1.0 / tau_cap:
        return LifetimeFit(tau_cap, float("inf"), float(p[0]), resid_norm, math.sqrt(max(cov[0, 0], 0.0)), True, it)
    return LifetimeFit(1.0 / rate, rate_err / rate ** 2, float(p[0]), resid_norm,
                       math.sqrt(max(cov[0, 0], 0.0)), False, it)


def optimal_cooling_factor(d: int) -> float:
    """Temperature reduction for an adiabatic doubling of volume with d mixed dimensions."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 2.0 ** (2.0 / d)


def cooling_yield(cooling_factor: float, f_opt: float) -> float:
    return math.log(cooling_factor) / math.log(f_opt)


def cooling_factor_and_yield(t_ramp_temperature: float, t_ref_temperature: float, f_opt: float,
                             t_ramp: float = float("nan")) -> CoolingResult:
    if t_ramp_temperature <= 0:
        raise ValueError("temperature must be positive")
    if t_ref_temperature <= 0:
        raise ValueError("reference temperature must be positive")
    if f_opt <= 1:
        raise ValueError("f_opt must exceed 1")
    f = t_ref_temperature / t_ramp_temperature
    return CoolingResult(t_ramp, t_ramp_temperature, f, cooling_yield(f, f_opt))


def cooling_sweep(t_ramps, temperatures, d: int = 3) -> list:
    """Cooling factors of a ramp-time sweep, referenced to the fastest ramp."""
    t_ramps = np.asarray(t_ramps, dtype=np.float64)
    temps = np.asarray(temperatures, dtype=np.float64)
    ref = temps[int(np.argmin(t_ramps))]
    f_opt = optimal_cooling_factor(d)
    return [cooling_factor_and_yield(T, ref, f_opt, float(tr)) for tr, T in zip(t_ramps, temps)]
