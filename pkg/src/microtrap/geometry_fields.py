"""Trap geometry and the electric field inside the microstructured box trap.

Coordinates: x along the 40 mm axis (region 1 at small x), y along the
stripes, z normal to the plates.  The field is a superposition of

* the Fourier field of both stripe arrays (ideal +-V square wave, pitch a),
* the plate-normal offset field of each region, blended by a smoothstep,
* a stripe-parallel (y) wedge component, a fixed fraction of |E_micro|,
* the perimeter barrier, exponential in the distance to each side wall,
  added in quadrature to the rest.

Everything, including grad|E|, is analytic; central differences are kept
as an option and as a cross-check.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .schedule import ElectrodeConfig, RampSchedule

WALLS = ("x_min", "x_max", "y_min", "y_max")


@dataclass(frozen=True)
class ExitAperture:
    """Opening in the perimeter electrode where the exit guide attaches.

    Spans the full plate gap in z; ``center``/``width`` run along the wall.
    """

    wall: str = "x_max"
    center: float = 0.010
    width: float = 0.002


@dataclass(frozen=True)
class TrapGeometry:
    length_x: float = 0.040
    width_y: float = 0.020
    gap_z: float = 0.003
    region_split_x: float = 0.020
    stripe_period: float = 400e-6
    exit_aperture: ExitAperture = field(default_factory=ExitAperture)

    def __post_init__(self):
        if min(self.length_x, self.width_y, self.gap_z, self.stripe_period) <= 0:
            raise ValueError("trap dimensions and stripe period must be positive")
        if not 0 < self.region_split_x < self.length_x:
            raise ValueError("region_split_x must lie strictly inside (0, length_x)")
        ap = self.exit_aperture
        if ap.wall not in WALLS:
            raise ValueError(f"exit aperture wall must be one of {WALLS}")
        span = self.width_y if ap.wall.startswith("x") else self.length_x
        if ap.width <= 0 or ap.center - ap.width / 2 < 0 or ap.center + ap.width / 2 > span:
            raise ValueError("exit aperture must lie entirely on its wall")

    @property
    def volume(self) -> float:
        return self.length_x * self.width_y * self.gap_z

    def contains(self, pos) -> bool:
        x, y, z = pos
        return 0 <= x <= self.length_x and 0 <= y <= self.width_y and 0 <= z <= self.gap_z

    def region_of(self, x):
        """1 for region 1 (x below the split), 2 otherwise; vectorised."""
        return np.where(np.asarray(x) < self.region_split_x, 1, 2)


@dataclass(frozen=True)
class FieldModel:
    """Numerical knobs of the field model (not electrode voltages).

    ``region_smoothing`` and ``perimeter_decay`` default to ``2*gap_z`` and
    ``gap_z/pi`` when left as None.

    ``perimeter`` picks the barrier shape when ``soft_perimeter`` is on:
    ``"quadrature"`` adds a scalar magnitude orthogonal to all other fields;
    ``"slab"`` uses the lowest mode of a wall electrode between two plates,
    a vector that turns from wall-normal at mid-gap to plate-normal at the
    plates and interferes with the offset field.
    """

    n_harmonics: int = 3
    region_smoothing: float | None = None
    perimeter_decay: float | None = None
    soft_perimeter: bool = True
    perimeter: str = "quadrature"
    gradient: str = "analytic"
    fd_step: float = 1e-6
    aperture_edge: float = 250e-6

    @property
    def perimeter_mode(self) -> int:
        """0 hard walls, 1 quadrature barrier, 2 slab barrier."""
        if not self.soft_perimeter:
            return 0
        return 1 if self.perimeter == "quadrature" else 2

    def __post_init__(self):
        if self.n_harmonics < 1:
            raise ValueError("n_harmonics must be >= 1")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")
        if self.perimeter not in ("quadrature", "slab"):
            raise ValueError("perimeter must be 'quadrature' or 'slab'")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")


@dataclass(frozen=True)
class FieldSample:
    """Field at a point.

    ``e_vec`` holds the plate, offset and wedge contributions.  The
    quadrature perimeter barrier is orthogonal to them by construction and is
    carried as the scalar ``e_perimeter``; the slab barrier is a true vector
    and sits inside ``e_vec`` (``e_perimeter`` is then 0).  Either way
    ``e_mag = sqrt(|e_vec|^2 + e_perimeter^2)``.
    """

    e_vec: np.ndarray
    e_perimeter: float
    e_mag: float
    grad_mag: np.ndarray
    barrier: float = 0.0  # perimeter barrier magnitude, either model

    @property
    def components(self) -> np.ndarray:
        return np.append(self.e_vec, self.e_perimeter)


# indices into the packed geometry array
G_LX, G_W, G_GAP, G_SPLIT, G_A, G_SMOOTH, G_LAMBDA, G_APWALL, G_APLO, G_APHI, G_APEDGE = range(11)
# indices into the packed electrode array (ElectrodeConfig field order)
C_VMU, C_V1, C_V2, C_EPER, C_WEDGE, C_S1, C_OPEN = range(7)


def pack_geometry(geometry: TrapGeometry, model: FieldModel) -> np.ndarray:
    ap = geometry.exit_aperture
    smooth = model.region_smoothing if model.region_smoothing is not None else 2 * geometry.gap_z
    lam = model.perimeter_decay if model.perimeter_decay is not None else geometry.gap_z / math.pi
    return np.array([
        geometry.length_x, geometry.width_y, geometry.gap_z, geometry.region_split_x,
        geometry.stripe_period, smooth, lam, float(WALLS.index(ap.wall)),
        ap.center - ap.width / 2, ap.center + ap.width / 2, model.aperture_edge,
    ])


@njit(cache=True, nogil=True, inline='always')
def smoothstep(u):
    if u <= 0.0:
        return 0.0, 0.0
    if u >= 1.0:
        return 1.0, 0.0
    return u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u)


@njit(cache=True, nogil=True, inline='always')
def region1_weight(x, geo):
    """Weight of region 1 at x (1 deep in region 1, 0 deep in region 2) and d/dx."""
    w = geo[G_SMOOTH]
    s, ds = smoothstep((x - (geo[G_SPLIT] - 0.5 * w)) / w)
    return 1.0 - s, -ds / w


@njit(cache=True, nogil=True)
def _plate_sums(x, zp, k, n_harm):
    """Odd-harmonic sums sum e^{-n k zp} {sin, cos, n sin, n cos}(n k x)."""
    th = k * x
    s1 = math.sin(th)
    c1 = math.cos(th)
    e1 = math.exp(-k * zp)
    return _harmonic_sums(s1, c1, e1, n_harm)


@njit(cache=True, nogil=True, inline='always')
def _harmonic_sums(s1, c1, e1, n_harm):
    c2 = 2.0 * (c1 * c1 - s1 * s1)  # 2 cos(2 theta)
    e2 = e1 * e1
    s_prev, c_prev = -s1, c1  # n = -1
    s_n, c_n, e_n = s1, c1, e1
    ss = 0.0
    sc = 0.0
    ns = 0.0
    nc = 0.0
    n = 1.0
    for _ in range(n_harm):
        ss += s_n * e_n
        sc += c_n * e_n
        ns += n * s_n * e_n
        nc += n * c_n * e_n
        s_next = c2 * s_n - s_prev
        c_next = c2 * c_n - c_prev
        s_prev, c_prev = s_n, c_n
        s_n, c_n = s_next, c_next
        e_n *= e2
        n += 2.0
    return ss, sc, ns, nc


@njit(cache=True, nogil=True, inline='always')
def micro_field(x, z, vmu, a, gap, n_harm):
    """Both stripe arrays: (Ex, Ez, dEx/dx, dEx/dz, dEz/dx, dEz/dz)."""
    k = math.pi / a
    amp = 4.0 * vmu / a
    th = k * x
    s1 = math.sin(th)
    c1 = math.cos(th)
    eb = math.exp(-k * z)
    et = math.exp(-k * gap) / eb
    bs, bc, bns, bnc = _harmonic_sums(s1, c1, eb, n_harm)
    ts, tc, tns, tnc = _harmonic_sums(s1, c1, et, n_harm)
    ex = -amp * (bc + tc)
    ez = amp * (bs - ts)
    ak = amp * k
    dex_dx = ak * (bns + tns)
    dex_dz = ak * (bnc - tnc)
    dez_dx = ak * (bnc - tnc)
    dez_dz = -ak * (bns + tns)
    return ex, ez, dex_dx, dex_dz, dez_dx, dez_dz


@njit(cache=True, nogil=True, inline='always')
def _aperture_mask(u, lo, hi, edge):
    s1, d1 = smoothstep((u - lo + edge) / edge)
    s2, d2 = smoothstep((hi + edge - u) / edge)
    return s1 * s2, (d1 * s2 - s1 * d2) / edge


@njit(cache=True, nogil=True, inline='always')
def perimeter_field(x, y, h1, dh1, cfg, geo):
    """Perimeter barrier magnitude and its (x, y) gradient.

    ``h1``/``dh1`` are the region-1 weight at x and its derivative.
    """
    lx = geo[G_LX]
    wy = geo[G_W]
    lam = geo[G_LAMBDA]
    e_loc = cfg[C_EPER] * (1.0 + (cfg[C_S1] - 1.0) * h1)
    de_loc = cfg[C_EPER] * (cfg[C_S1] - 1.0) * dh1

    f0 = math.exp(-x / lam)
    f1 = math.exp(-lx / lam) / f0
    f2 = math.exp(-y / lam)
    f3 = math.exp(-wy / lam) / f2
    fx = (f1 - f0) / lam
    fy = (f3 - f2) / lam
    big_f = f0 + f1 + f2 + f3

    op = cfg[C_OPEN]
    if op > 0.0:
        wall = int(geo[G_APWALL])
        u = y if wall < 2 else x
        m, dm = _aperture_mask(u, geo[G_APLO], geo[G_APHI], geo[G_APEDGE])
        # remove op*m of the masked wall's term
        if wall == 0:
            fw, dn = f0, -f0 / lam
        elif wall == 1:
            fw, dn = f1, f1 / lam
        elif wall == 2:
            fw, dn = f2, -f2 / lam
        else:
            fw, dn = f3, f3 / lam
        big_f -= op * m * fw
        if wall < 2:
            fx -= op * m * dn
            fy -= op * dm * fw
        else:
            fy -= op * m * dn
            fx -= op * dm * fw

    return e_loc * big_f, de_loc * big_f + e_loc * fx, e_loc * fy


@njit(cache=True, nogil=True, inline='always')
def barrier_peak(x, y, wall, cfg, geo):
    """Peak perimeter field at the wall point (x, y), aperture opening included."""
    h1, _ = region1_weight(x, geo)
    e_loc = cfg[C_EPER] * (1.0 + (cfg[C_S1] - 1.0) * h1)
    if wall == int(geo[G_APWALL]) and cfg[C_OPEN] > 0.0:
        u = y if wall < 2 else x
        m, _ = _aperture_mask(u, geo[G_APLO], geo[G_APHI], geo[G_APEDGE])
        e_loc *= 1.0 - cfg[C_OPEN] * m
    return e_loc


@njit(cache=True, nogil=True, inline='always')
def _wall_terms(x, y, h1, dh1, cfg, geo):
    """Barrier amplitudes of the slab model and their in-plane derivatives.

    With g_w = e_loc * mask * exp(-d_w / lambda) for walls x_min, x_max,
    y_min, y_max, returns (ax, ay, fs) = (g0 - g1, g2 - g3, sum g) followed by
    d/dx and d/dy of each.
    """
    lx = geo[G_LX]
    wy = geo[G_W]
    lam = geo[G_LAMBDA]
    f0 = math.exp(-x / lam)
    f1 = math.exp(-lx / lam) / f0
    f2 = math.exp(-y / lam)
    f3 = math.exp(-wy / lam) / f2
    # d/dx of f0, f1 and d/dy of f2, f3
    d0 = -f0 / lam
    d1 = f1 / lam
    d2 = -f2 / lam
    d3 = f3 / lam
    # cross derivatives from the aperture mask (along the wall)
    c0 = 0.0
    c1 = 0.0
    c2 = 0.0
    c3 = 0.0
    op = cfg[C_OPEN]
    if op > 0.0:
        wall = int(geo[G_APWALL])
        u = y if wall < 2 else x
        m, dm = _aperture_mask(u, geo[G_APLO], geo[G_APHI], geo[G_APEDGE])
        keep = 1.0 - op * m
        if wall == 0:
            c0 = -op * dm * f0
            f0 *= keep
            d0 *= keep
        elif wall == 1:
            c1 = -op * dm * f1
            f1 *= keep
            d1 *= keep
        elif wall == 2:
            c2 = -op * dm * f2
            f2 *= keep
            d2 *= keep
        else:
            c3 = -op * dm * f3
            f3 *= keep
            d3 *= keep
    e_loc = cfg[C_EPER] * (1.0 + (cfg[C_S1] - 1.0) * h1)
    de_loc = cfg[C_EPER] * (cfg[C_S1] - 1.0) * dh1
    ax = f0 - f1
    ay = f2 - f3
    fs = f0 + f1 + f2 + f3
    ax_x = de_loc * ax + e_loc * (d0 - d1)
    ax_y = e_loc * (c0 - c1)
    ay_x = de_loc * ay + e_loc * (c2 - c3)
    ay_y = e_loc * (d2 - d3)
    fs_x = de_loc * fs + e_loc * (d0 + d1 + c2 + c3)
    fs_y = e_loc * (c0 + c1 + d2 + d3)
    return e_loc * ax, e_loc * ay, e_loc * fs, ax_x, ax_y, ay_x, ay_y, fs_x, fs_y


@njit(cache=True, nogil=True, inline='always')
def field_eval(x, y, z, cfg, geo, n_harm, soft):
    """Field at (x, y, z).

    Returns (Ex, Ey, Ez, E_perimeter, |E|, d|E|/dx, d|E|/dy, d|E|/dz, barrier)
    where ``barrier`` is the perimeter field magnitude for either soft model.
    ``soft`` is 0 (no barrier field), 1 (quadrature) or 2 (slab).
    """
    mx, mz, jxx, jxz, jzx, jzz = micro_field(x, z, cfg[C_VMU], geo[G_A], geo[G_GAP], n_harm)

    mmag = math.sqrt(mx * mx + mz * mz)
    if mmag > 0.0:
        gmx = (mx * jxx + mz * jzx) / mmag
        gmz = (mx * jxz + mz * jzz) / mmag
    else:
        gmx = 0.0
        gmz = 0.0

    h1, dh1 = region1_weight(x, geo)
    gap = geo[G_GAP]
    v_off = cfg[C_V2] + (cfg[C_V1] - cfg[C_V2]) * h1
    eoff = -2.0 * v_off / gap
    deoff_dx = -2.0 * (cfg[C_V1] - cfg[C_V2]) * dh1 / gap

    w = cfg[C_WEDGE]
    ex = mx
    ey = w * mmag
    ez = mz + eoff
    # d(ex, ey, ez)/d(x, y, z)
    dexx, dexy, dexz = jxx, 0.0, jxz
    deyx, deyy, deyz = w * gmx, 0.0, w * gmz
    dezx, dezy, dezz = jzx + deoff_dx, 0.0, jzz

    p = 0.0
    dpx = 0.0
    dpy = 0.0
    barrier = 0.0
    if soft == 1:
        p, dpx, dpy = perimeter_field(x, y, h1, dh1, cfg, geo)
        barrier = p
    elif soft == 2:
        axw, ayw, fsum, ax_x, ax_y, ay_x, ay_y, fs_x, fs_y = _wall_terms(x, y, h1, dh1, cfg, geo)
        lam = geo[G_LAMBDA]
        sz = math.sin(z / lam)
        cz = math.cos(z / lam)
        ex += axw * sz
        ey += ayw * sz
        ez -= fsum * cz
        dexx += ax_x * sz
        dexy += ax_y * sz
        dexz += axw * cz / lam
        deyx += ay_x * sz
        deyy += ay_y * sz
        deyz += ayw * cz / lam
        dezx -= fs_x * cz
        dezy -= fs_y * cz
        dezz += fsum * sz / lam
        barrier = math.sqrt(axw * axw * sz * sz + ayw * ayw * sz * sz + fsum * fsum * cz * cz)

    mag = math.sqrt(ex * ex + ey * ey + ez * ez + p * p)
    if mag > 0.0:
        gx_ = (ex * dexx + ey * deyx + ez * dezx + p * dpx) / mag
        gy_ = (ex * dexy + ey * deyy + ez * dezy + p * dpy) / mag
        gz_ = (ex * dexz + ey * deyz + ez * dezz) / mag
    else:
        gx_ = 0.0
        gy_ = 0.0
        gz_ = 0.0
    return ex, ey, ez, p, mag, gx_, gy_, gz_, barrier


@njit(cache=True, nogil=True)
def field_eval_fd(x, y, z, cfg, geo, n_harm, soft, h):
    """Same as field_eval but grad|E| by central differences with step h."""
    ex, ey, ez, p, mag, _, _, _, barrier = field_eval(x, y, z, cfg, geo, n_harm, soft)
    gx = (field_eval(x + h, y, z, cfg, geo, n_harm, soft)[4] - field_eval(x - h, y, z, cfg, geo, n_harm, soft)[4]) / (2 * h)
    gy = (field_eval(x, y + h, z, cfg, geo, n_harm, soft)[4] - field_eval(x, y - h, z, cfg, geo, n_harm, soft)[4]) / (2 * h)
    gz = (field_eval(x, y, z + h, cfg, geo, n_harm, soft)[4] - field_eval(x, y, z - h, cfg, geo, n_harm, soft)[4]) / (2 * h)
    return ex, ey, ez, p, mag, gx, gy, gz, barrier


@njit(cache=True)
def _field_grid(points, cfg, geo, n_harm, soft, use_fd, h):
    out = np.empty((points.shape[0], 9))
    for i in range(points.shape[0]):
        if use_fd:
            r = field_eval_fd(points[i, 0], points[i, 1], points[i, 2], cfg, geo, n_harm, soft, h)
        else:
            r = field_eval(points[i, 0], points[i, 1], points[i, 2], cfg, geo, n_harm, soft)
        for j in range(9):
            out[i, j] = r[j]
    return out


def microstructure_field(pos, plate: str, v_micro: float, n_harmonics: int = 1,
                         stripe_period: float = 400e-6, gap_z: float = 0.003) -> np.ndarray:
    """Field of one stripe array of alternating +-v_micro, pitch ``stripe_period``.

    ``plate`` is ``"bottom"`` (z = 0) or ``"top"`` (z = gap_z).  Returns the
    Cartesian field vector (the y component is always zero).
    """
    if n_harmonics < 1:
        raise ValueError("n_harmonics must be >= 1")
    if plate not in ("bottom", "top"):
        raise ValueError("plate must be 'bottom' or 'top'")
    x, _, z = (float(c) for c in pos)
    zp = z if plate == "bottom" else gap_z - z
    if zp < 0:
        raise ValueError("position lies behind the plate")
    k = math.pi / stripe_period
    amp = 4.0 * v_micro / stripe_period
    ss, sc, _, _ = _plate_sums(x, zp, k, n_harmonics)
    # potential sum 4V/(n pi) sin(n k x) e^{-n k zp}; field = -grad
    ez = amp * ss if plate == "bottom" else -amp * ss
    return np.array([-amp * sc, 0.0, ez])


def evaluate(points, config: ElectrodeConfig, geometry: TrapGeometry, model: FieldModel = FieldModel()) -> np.ndarray:
    """Vectorised field evaluation, no domain checks.

    Returns an (n, 9) array of Ex, Ey, Ez, E_perimeter, |E|, grad|E| (x, y, z)
    and the perimeter barrier magnitude.
    """
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    return _field_grid(pts, config.as_array(), pack_geometry(geometry, model), model.n_harmonics,
                       model.perimeter_mode, model.gradient == "fd", model.fd_step)


def total_field(pos, t: float, geometry: TrapGeometry, schedule: RampSchedule,
                model: FieldModel = FieldModel()) -> FieldSample:
    pos = np.asarray(pos, dtype=np.float64)
    if not geometry.contains(pos):
        raise ValueError(f"position {pos} outside the trap")
    cfg = schedule.at(t)
    r = evaluate(pos, cfg, geometry, model)[0]
    return FieldSample(e_vec=r[0:3].copy(), e_perimeter=float(r[3]), e_mag=float(r[4]), grad_mag=r[5:8].copy(),
                       barrier=float(r[8]))


def _axis(lo, hi, step):
    if hi - lo <= 0:
        return np.array([lo])
    n = max(int(math.floor((hi - lo) / step + 1e-9)) + 1, 2)
    return np.linspace(lo, hi, n)


def find_field_zeros(region, t: float, geometry: TrapGeometry, schedule: RampSchedule, threshold: float,
                     model: FieldModel = FieldModel(), resolution: float | None = None,
                     tol: float = 1e-9, max_iter: int = 5000) -> list:
    """Local minima of |E| below ``threshold`` inside ``region``.

    ``region`` is ``((x0, x1), (y0, y1), (z0, z1))``; a zero-width axis is
    scanned as a single plane.  Grid candidates are refined by gradient
    descent on |E|^2 and merged when closer than a tenth of the stripe period.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    bounds = np.asarray(region, dtype=np.float64)
    if bounds.shape != (3, 2) or np.any(bounds[:, 1] < bounds[:, 0]):
        raise ValueError("region must be a non-empty box ((x0, x1), (y0, y1), (z0, z1))")
    res = resolution if resolution is not None else geometry.stripe_period / 20
    cfg = schedule.at(t)
    geo = pack_geometry(geometry, model)
    cfg_arr = cfg.as_array()

    axes = [_axis(lo, hi, res) for lo, hi in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mags = evaluate(grid.reshape(-1, 3), cfg, geometry, model)[:, 4].reshape(grid.shape[:3])

    # strict-or-equal local minima over the axes actually scanned
    is_min = np.ones(mags.shape, dtype=bool)
    for ax in range(3):
        if mags.shape[ax] < 2:
            continue
        for shift in (1, -1):
            nb = np.roll(mags, shift, axis=ax)
            edge = [slice(None)] * 3
            edge[ax] = 0 if shift == 1 else -1
            nb[tuple(edge)] = np.inf
            is_min &= mags <= nb

    lo, hi = bounds[:, 0], bounds[:, 1]
    found = []
    for idx in zip(*np.nonzero(is_min)):
        p = _descend(grid[idx].copy(), cfg_arr, geo, model, lo, hi, tol, max_iter)
        mag = _field_grid(p[None, :], cfg_arr, geo, model.n_harmonics, model.perimeter_mode, False, 1.0)[0, 4]
        if mag < threshold:
            found.append((p, mag))

    found.sort(key=lambda pm: pm[1])
    merged = []
    for p, _ in found:
        if all(np.linalg.norm(p - q) >= geometry.stripe_period / 10 for q in merged):
            merged.append(p)
    merged.sort(key=lambda p: tuple(p))
    return merged


def _descend(p, cfg, geo, model, lo, hi, tol, max_iter):
    """Gradient descent on |E|^2 with an adaptive step, clipped to the box."""

    def f_and_grad(q):
        r = _field_grid(q[None, :], cfg, geo, model.n_harmonics, model.perimeter_mode, False, 1.0)[0]
        return r[4] ** 2, 2.0 * r[4] * r[5:8]

    f, g = f_and_grad(p)
    step = 1e-12
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        while True:
            q = np.clip(p - step * g, lo, hi)
            fq, gq = f_and_grad(q)
            if fq <= f or step < 1e-30:
                break
            step *= 0.5
        dp = np.linalg.norm(q - p)
        p, f, g = q, fq, gq
        step *= 2.0
        if dp < tol:
            break
    return p


def write_field_map(path, xs, ys, zs, t: float, geometry: TrapGeometry, schedule: RampSchedule,
                    model: FieldModel = FieldModel(), comment: str | None = None) -> int:
    """Writes the field on the raster xs * ys * zs (z fastest) as CSV; returns row count."""
    xs, ys, zs = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (xs, ys, zs))
    for a, hi in ((xs, geometry.length_x), (ys, geometry.width_y), (zs, geometry.gap_z)):
        if a.size == 0 or a.min() < 0 or a.max() > hi:
            raise ValueError("sample grid must lie inside the trap")
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = evaluate(pts, schedule.at(t), geometry, model)
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "t", "Ex", "Ey", "Ez", "Emag"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(t)),
                        repr(float(v[0])), repr(float(v[1])), repr(float(v[2])), repr(float(v[4]))])
    return len(pts)
