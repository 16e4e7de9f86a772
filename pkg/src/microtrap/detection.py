"""Time-of-flight signals from unloaded molecules.

Molecules leaving through the exit aperture fly ballistically down the exit
guide at their axial exit speed; the arrival time is binned relative to the
unload trigger ``t0``.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .rng import LANE_DETECT, uniform_block

log = logging.getLogger(__name__)

NORMALIZATIONS = ("raw", "unit_peak", "unit_area")


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionGeometry:
    guide_length: float = 0.30
    detection_efficiency: float = 1.0
    bin_width: float = 0.01
    jitter: float = 0.0  # s, Gaussian arrival-time spread

    def __post_init__(self):
        if self.guide_length <= 0 or self.bin_width <= 0:
            raise ValueError("guide_length and bin_width must be positive")
        if not 0 < self.detection_efficiency <= 1:
            raise ValueError("detection_efficiency must lie in (0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class TofSignal:
    """Binned arrival-time histogram; ``t_centers`` are measured from ``t0``."""

    t0: float
    bin_width: float
    t_centers: np.ndarray
    counts: np.ndarray
    normalization: str = "raw"
    guide_length: float = float("nan")
    n_detected: int = 0
    n_skipped: int = 0

    def __post_init__(self):
        self.t_centers = np.asarray(self.t_centers, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.t_centers.shape != self.counts.shape:
            raise ValueError("t_centers and counts differ in length")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if len(self.t_centers) > 1:
            d = np.diff(self.t_centers)
            if np.any(d <= 0) or not np.allclose(d, self.bin_width, rtol=1e-6, atol=0):
                raise ValueError("bin centres must be increasing with constant pitch bin_width")

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.t_centers - self.bin_width / 2, self.t_centers[-1:] + self.bin_width / 2)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def arrival_times(t_exit, v_axial, det: DetectionGeometry, t0: float, seed: int, index=None):
    """Arrival time after ``t0`` of each molecule that reaches the detector.

    Returns ``(times, n_skipped)``; molecules with v_axial <= 0 cannot enter
    the guide and are skipped, the rest survive with probability
    ``detection_efficiency``.
    """
    t_exit = np.asarray(t_exit, dtype=np.float64)
    v = np.asarray(v_axial, dtype=np.float64)
    idx = np.arange(len(v)) if index is None else np.asarray(index, dtype=np.int64)
    if np.any(t_exit < t0 - 1e-12):
        raise ValueError("exit times must not precede the unload trigger")
    ok = v > 0
    n_skipped = int(np.sum(~ok))
    if n_skipped:
        log.warning("%d molecules left the trap with non-positive axial speed and were skipped", n_skipped)
    u = uniform_block(seed, LANE_DETECT, idx, 3) if len(idx) else np.zeros((0, 3))
    keep = ok & (u[:, 0] < det.detection_efficiency)
    t = t_exit[keep] - t0 + det.guide_length / v[keep]
    if det.jitter > 0:
        # Box-Muller on the molecule's own draws
        u1 = 1.0 - u[keep, 1]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * math.pi * u[keep, 2])
        t = np.maximum(t + det.jitter * z, 0.0)
    return t, n_skipped


def bin_arrivals(times, det: DetectionGeometry, t0: float, n_skipped: int = 0, t_max: float | None = None) -> TofSignal:
    times = np.asarray(times, dtype=np.float64)
    bw = det.bin_width
    top = t_max if t_max is not None else (times.max() if times.size else bw)
    n_bins = max(int(math.floor(top / bw)) + 1, 1)
    idx = np.floor(times / bw).astype(np.int64)
    counts = np.bincount(idx[idx < n_bins], minlength=n_bins).astype(np.float64)
    centers = (np.arange(n_bins) + 0.5) * bw
    return TofSignal(t0=t0, bin_width=bw, t_centers=centers, counts=counts, normalization="raw",
                     guide_length=det.guide_length, n_detected=int(counts.sum()), n_skipped=n_skipped)


def transport_and_bin(exiting, det: DetectionGeometry, seed: int, t0: float = 0.0, t_max: float | None = None) -> TofSignal:
    """Ballistic transport of exiting molecules to the detector, then binning.

    ``exiting`` is a list of ``(MoleculeState, t_exit)`` whose ``exit_speed``
    holds the speed along the guide axis, or an :class:`Ensemble` of
    detected molecules (``t_loss`` = exit time).
    """
    if hasattr(exiting, "exit_speed") and hasattr(exiting, "t_loss"):
        t_exit, v, index = exiting.t_loss, exiting.exit_speed, exiting.index
    else:
        pairs = list(exiting)
        t_exit = np.array([te for _, te in pairs], dtype=np.float64)
        v = np.array([_axial_speed(s) for s, _ in pairs], dtype=np.float64)
        index = np.array([s.index for s, _ in pairs], dtype=np.int64)
    times, skipped = arrival_times(t_exit, v, det, t0, seed, index)
    return bin_arrivals(times, det, t0, skipped, t_max)


def _axial_speed(state) -> float:
    if state.exit_speed is not None:
        return float(state.exit_speed)
    return float(state.vel[0])


def normalize(signal: TofSignal, mode: str) -> TofSignal:
    if mode not in ("unit_peak", "unit_area"):
        raise ValueError("mode must be 'unit_peak' or 'unit_area'")
    c = signal.counts
    if c.size == 0 or not np.any(c > 0):
        raise NormalizationError("cannot normalise an all-zero signal")
    scale = c.max() if mode == "unit_peak" else c.sum() * signal.bin_width
    return TofSignal(signal.t0, signal.bin_width, signal.t_centers.copy(), c / scale, mode,
                     signal.guide_length, signal.n_detected, signal.n_skipped)


def rising_edge_cumulative(signal: TofSignal):
    """Normalised cumulative arrival curve S over the rising edge.

    The window runs from ``t0`` to the bin holding the signal maximum
    (inclusive).  S is sampled at bin edges, is 0 at the left edge of the
    first occupied bin and 1 at the right edge of the maximum bin.
    Returns ``(t, S)`` with t measured from ``t0``.
    """
    c = signal.counts
    if c.size == 0 or not np.any(c > 0):
        return np.zeros(0), np.zeros(0)
    k_max = int(np.argmax(c))
    first = int(np.argmax(c > 0))
    cum = np.cumsum(c[: k_max + 1])
    edges = signal.t_centers[: k_max + 1] + signal.bin_width / 2
    t = np.concatenate([[signal.t_centers[first] - signal.bin_width / 2], edges[first:]])
    s = np.concatenate([[0.0], cum[first:] / cum[-1]])
    return t, s


def write_tof(path, signal: TofSignal, comment: str | None = None) -> None:
    """TOF CSV: comment lines, then ``t_s,count`` with t_s measured from t0."""
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"# t0={signal.t0!r} bin_width={signal.bin_width!r} L={signal.guide_length!r} "
                 f"normalization={signal.normalization}\n")
        w = csv.writer(fh)
        w.writerow(["t_s", "count"])
        for t, c in zip(signal.t_centers, signal.counts):
            w.writerow([repr(float(t)), repr(float(c))])


def read_tof(path) -> TofSignal:
    meta = {}
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            body.append(line)
    if not body or body[0].replace(" ", "") != "t_s,count":
        raise ValueError(f"{path}: missing 't_s,count' header")
    for line in body[1:]:
        t, c = line.split(",")
        rows.append((float(t), float(c)))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    t = np.array([r[0] for r in rows])
    c = np.array([r[1] for r in rows])
    bw = float(meta["bin_width"]) if "bin_width" in meta else (float(np.diff(t).mean()) if len(t) > 1 else 1.0)
    return TofSignal(
        t0=float(meta.get("t0", 0.0)), bin_width=bw, t_centers=t, counts=c,
        normalization=meta.get("normalization", "raw"), guide_length=float(meta.get("L", "nan")),
        n_detected=int(c.sum()) if meta.get("normalization", "raw") == "raw" else 0,
    )
