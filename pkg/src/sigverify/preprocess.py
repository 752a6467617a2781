"""From raw pen samples to the two-channel pressure/time raster.

Stages: cubic-spline smoothing of pen-down runs, rotation onto the principal
axis (orthogonal regression angle), min/max size normalisation to [0, 100]
and rasterisation with integer line stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateExtent, DegenerateGeometry
from .signatures import RawSignature

# painted pixels store FLOOR + (1 - FLOOR) * value so ink is never exactly 0
INK_FLOOR = 0.05


@dataclass(frozen=True)
class SignatureStatistics:
    sx2: float
    sy2: float
    cov_xy: float
    theta: float


@dataclass(frozen=True, eq=False)
class NormalizedSignature:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    pen_down: np.ndarray
    p: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True, eq=False)
class SignatureImage:
    """Pressure and time channels, each ``height x width`` with values in [0, 1]."""

    pressure: np.ndarray
    time: np.ndarray

    def __post_init__(self):
        if self.pressure.shape != self.time.shape or self.pressure.ndim != 2:
            raise ValueError("channels must be 2-D with identical shapes")

    @property
    def height(self) -> int:
        return self.pressure.shape[0]

    @property
    def width(self) -> int:
        return self.pressure.shape[1]

    @property
    def channels(self) -> np.ndarray:
        """``(2, H, W)`` stack, pressure first."""
        return np.stack([self.pressure, self.time])

    def equals(self, other: "SignatureImage") -> bool:
        return (np.array_equal(self.pressure, other.pressure)
                and np.array_equal(self.time, other.time))


# -- rotation ----------------------------------------------------------------

def compute_statistics(sig: RawSignature) -> SignatureStatistics:
    """Population moments of the pen positions and the major-axis angle.

    The angle is the orthogonal-regression slope
    ``atan((sy2 - sx2 + sqrt((sy2 - sx2)^2 + 4 cov^2)) / (2 cov))``.
    When ``sy2 < sx2`` the numerator cancels badly, so the algebraically equal
    form ``2 cov / (sx2 - sy2 + sqrt(...))`` is used instead. With zero
    covariance the principal axis is a coordinate axis: 0 if ``sx2 >= sy2``,
    otherwise pi/2.
    """
    x = np.asarray(sig.x, dtype=np.float64)
    y = np.asarray(sig.y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sx2 = float(np.mean(dx * dx))
    sy2 = float(np.mean(dy * dy))
    cov = float(np.mean(dx * dy))
    if sx2 == 0.0 and sy2 == 0.0:
        raise DegenerateGeometry("all points coincide")
    cov = math.copysign(min(abs(cov), math.sqrt(sx2 * sy2)), cov)

    if cov == 0.0:
        theta = 0.0 if sx2 >= sy2 else math.pi / 2
    else:
        a = sy2 - sx2
        root = math.hypot(a, 2.0 * cov)
        if a >= 0:
            slope = (a + root) / (2.0 * cov)
        else:
            slope = 2.0 * cov / (root - a)
        theta = math.atan(slope)
    return SignatureStatistics(sx2=sx2, sy2=sy2, cov_xy=cov, theta=theta)


def rotate(sig: RawSignature, theta: float) -> RawSignature:
    """Rotate pen positions by ``-theta`` about their centroid."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    if theta == 0.0:
        return sig
    cx, cy = sig.x.mean(), sig.y.mean()
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = sig.x - cx, sig.y - cy
    return sig.replace(x=cx + c * dx + s * dy, y=cy - s * dx + c * dy)


# -- smoothing ----------------------------------------------------------------

def _runs(mask: np.ndarray):
    """Yield ``(start, stop, value)`` for maximal constant runs of a bool array."""
    n = len(mask)
    edges = np.flatnonzero(np.diff(mask.astype(np.int8))) + 1
    bounds = np.concatenate([[0], edges, [n]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield int(a), int(b), bool(mask[a])


def smooth(sig: RawSignature, factor: float = 2.0) -> RawSignature:
    """Replace every pen-down run of >= 4 points by a resampled natural spline.

    The spline is parameterised by sample index; the run is resampled at
    ``round(factor * n)`` evenly spaced parameters, with timestamps and
    pressure interpolated linearly. Shorter runs and pen-up samples are kept.
    """
    if factor < 1:
        raise ValueError("smoothing factor must be >= 1")
    cols = {k: [] for k in ("x", "y", "t", "pen_down", "pressure", "azimuth", "altitude")}
    has_az = sig.azimuth is not None
    has_al = sig.altitude is not None

    for a, b, down in _runs(sig.pen_down):
        n = b - a
        if not down or n < 4:
            for k in cols:
                arr = getattr(sig, k)
                if arr is not None:
                    cols[k].append(arr[a:b])
            continue
        knots = np.arange(n, dtype=np.float64)
        m = max(n, int(round(factor * n)))
        u = np.linspace(0.0, n - 1.0, m)
        cols["x"].append(CubicSpline(knots, sig.x[a:b], bc_type="natural")(u))
        cols["y"].append(CubicSpline(knots, sig.y[a:b], bc_type="natural")(u))
        for k in ("t", "pressure", "azimuth", "altitude"):
            arr = getattr(sig, k)
            if arr is not None:
                cols[k].append(np.interp(u, knots, arr[a:b]))
        cols["pen_down"].append(np.ones(m, dtype=bool))

    t = np.concatenate(cols["t"])
    # linear interpolation of a non-decreasing series stays non-decreasing,
    # but guard against rounding at run boundaries
    t = np.maximum.accumulate(t)
    return sig.replace(
        x=np.concatenate(cols["x"]), y=np.concatenate(cols["y"]), t=t,
        pen_down=np.concatenate(cols["pen_down"]),
        pressure=np.concatenate(cols["pressure"]),
        azimuth=np.concatenate(cols["azimuth"]) if has_az else None,
        altitude=np.concatenate(cols["altitude"]) if has_al else None,
    )


# -- normalisation ---------------------------------------------------------------

def _unit_time_pressure(sig: RawSignature):
    t = sig.t
    span = t.max() - t.min()
    t_n = (t - t.min()) / span if span > 0 else np.zeros_like(t)
    pmax = sig.pressure.max()
    if pmax > 0:
        p_n = sig.pressure / pmax
    else:
        p_n = sig.pen_down.astype(np.float64)
    return t_n, p_n


def normalize(sig: RawSignature) -> NormalizedSignature:
    """Scale x and y independently onto [0, 100]; t and pressure onto [0, 1]."""
    x, y = sig.x, sig.y
    xr = x.max() - x.min()
    yr = y.max() - y.min()
    if xr <= 0 or yr <= 0:
        raise DegenerateExtent("signature has constant x or constant y")
    x_n = (x - x.min()) / xr * 100.0
    y_n = (y - y.min()) / yr * 100.0
    t_n, p_n = _unit_time_pressure(sig)
    return NormalizedSignature(x=x_n, y=y_n, t=t_n, pen_down=sig.pen_down.copy(), p=p_n)


def identity_normalized(sig: RawSignature) -> NormalizedSignature:
    """Coordinates taken as already in [0, 100]; only t and pressure rescaled."""
    t_n, p_n = _unit_time_pressure(sig)
    return NormalizedSignature(x=sig.x.copy(), y=sig.y.copy(), t=t_n,
                               pen_down=sig.pen_down.copy(), p=p_n)


# -- rasterisation --------------------------------------------------------------

def grid_mapping(width: int, height: int):
    """Scale and offsets taking [0, 100]^2 onto pixel centres, aspect preserved."""
    scale = min(width - 1, height - 1) / 100.0
    off_c = (width - 1 - 100.0 * scale) / 2.0
    off_r = (height - 1 - 100.0 * scale) / 2.0
    return scale, off_c, off_r


def to_pixels(sig: NormalizedSignature, width: int, height: int):
    scale, off_c, off_r = grid_mapping(width, height)
    cols = np.clip(np.floor(off_c + sig.x * scale + 0.5), 0, width - 1).astype(np.int64)
    rows = np.clip(np.floor(off_r + sig.y * scale + 0.5), 0, height - 1).astype(np.int64)
    return cols, rows


def _round_div(num, den):
    """floor(num / den + 1/2) in exact integer arithmetic, den > 0."""
    return (2 * num + den) // (2 * den)


def line_pixels(c0: int, r0: int, c1: int, r1: int):
    """Integer line stepping from ``(c0, r0)`` to ``(c1, r1)``.

    Steps along the major axis; the minor coordinate at step ``i`` is the
    exact rational ``r0 + i * dr / n`` rounded half-up. Returns ``(cols, rows,
    frac)`` where ``frac = i / n`` is the position along the segment.
    """
    dc, dr = c1 - c0, r1 - r0
    n = max(abs(dc), abs(dr))
    if n == 0:
        return np.array([c0]), np.array([r0]), np.array([0.0])
    i = np.arange(n + 1, dtype=np.int64)
    cols = _round_div(c0 * n + i * dc, n)
    rows = _round_div(r0 * n + i * dr, n)
    return cols, rows, i / n


def rasterize(sig: NormalizedSignature, width: int = 64, height: int = 64) -> SignatureImage:
    """Paint the pen trajectory onto a ``height x width`` two-channel grid.

    Consecutive pen-down samples are joined by a discrete line along which
    pressure and time are interpolated linearly; a pen-up sample breaks the
    line. A pixel keeps the maximum pressure of the samples covering it and
    the time of the last sample (in drawing order) covering it.
    """
    if width < 8 or height < 8:
        raise ValueError("raster must be at least 8x8")
    pressure = np.zeros((height, width))
    time = np.zeros((height, width))
    cols, rows = to_pixels(sig, width, height)
    down = np.asarray(sig.pen_down, dtype=bool)
    p = np.clip(sig.p, 0.0, 1.0)
    t = np.clip(sig.t, 0.0, 1.0)

    def paint(cc, rr, pv, tv):
        pv = INK_FLOOR + (1 - INK_FLOOR) * pv
        tv = INK_FLOOR + (1 - INK_FLOOR) * tv
        np.maximum.at(pressure, (rr, cc), pv)
        # pixels within one segment are distinct; later segments overwrite
        time[rr, cc] = tv

    n = len(down)
    for i in range(n):
        if not down[i]:
            continue
        joined_prev = i > 0 and down[i - 1]
        joined_next = i + 1 < n and down[i + 1]
        if joined_next:
            cc, rr, f = line_pixels(int(cols[i]), int(rows[i]), int(cols[i + 1]), int(rows[i + 1]))
            paint(cc, rr, p[i] + f * (p[i + 1] - p[i]), t[i] + f * (t[i + 1] - t[i]))
        elif not joined_prev:
            paint(np.array([cols[i]]), np.array([rows[i]]), np.array([p[i]]), np.array([t[i]]))
    return SignatureImage(pressure=pressure, time=time)


# -- pipeline -------------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    raster_width: int = 64
    raster_height: int = 64
    smooth_factor: float = 2.0
    do_smooth: bool = True
    do_rotate: bool = True
    do_normalize: bool = True

    def __post_init__(self):
        if self.raster_width < 8 or self.raster_height < 8:
            raise ValueError("raster_width and raster_height must be >= 8")
        if self.smooth_factor < 1:
            raise ValueError("smooth_factor must be >= 1")


def preprocess_pipeline(sig: RawSignature, config: PreprocessConfig = PreprocessConfig()) -> SignatureImage:
    if config.do_smooth:
        sig = smooth(sig, config.smooth_factor)
    if config.do_rotate:
        sig = rotate(sig, compute_statistics(sig).theta)
    norm = normalize(sig) if config.do_normalize else identity_normalized(sig)
    return rasterize(norm, config.raster_width, config.raster_height)
