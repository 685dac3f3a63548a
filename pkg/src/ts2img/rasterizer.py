"""Deterministic line-plot rendering of time series.

A plot is a 432x288 RGB raster: white canvas, one anti-aliased curve per
series, a black frame around the axes box, outward tick marks and numeric
tick labels stamped from the embedded bitmap font. Nothing depends on host
fonts or a graphics library, so identical inputs give identical pixels.

Pixel coordinates are continuous with pixel ``(row, col)`` centred at
``(x=col, y=row)``; row 0 is the top of the image.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from . import font
from .ticks import expand_degenerate, format_tick, nice_ticks

TICK_LENGTH = 3.5
TICK_PAD = 3.5
X_TICK_TARGET = 7
Y_TICK_TARGET = 6
FRAME_WIDTH = 1.0
# bump whenever pixels change for identical input; part of every cache key
RENDERER_VERSION = 2

DEFAULT_PALETTE = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
)


@dataclass
class TimeSeries:
    values: np.ndarray
    timestamps: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
            if self.timestamps.shape != self.values.shape:
                raise ValueError("timestamps and values differ in length")
            if np.any(np.diff(self.timestamps) <= 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.values)

    def time_axis(self, log=False):
        if self.timestamps is not None:
            return self.timestamps
        # implicit index; starts at 1 on a log axis so every point is plottable
        return np.arange(len(self.values), dtype=np.float64) + (1.0 if log else 0.0)


@dataclass(frozen=True)
class PlotSpec:
    width_px: int = 432
    height_px: int = 288
    axes_box: tuple = (0.125, 0.9, 0.11, 0.88)  # left, right, bottom, top
    x_scale: str = "linear"
    palette: tuple = DEFAULT_PALETTE
    line_width_px: float = 1.5
    background: tuple = (255, 255, 255)
    data_margin: float = 0.05

    def __post_init__(self):
        left, right, bottom, top = self.axes_box
        if not (0 <= left < right <= 1 and 0 <= bottom < top <= 1):
            raise ValueError(f"invalid axes box {self.axes_box}")
        if not self.palette:
            raise ValueError("palette must not be empty")
        if self.x_scale not in ("linear", "log10"):
            raise ValueError(f"x_scale must be 'linear' or 'log10', got {self.x_scale!r}")

    @property
    def log_x(self):
        return self.x_scale == "log10"

    def box_px(self):
        """Axes box as ``(x_left, x_right, y_top, y_bottom)`` in pixel coordinates."""
        left, right, bottom, top = self.axes_box
        return (left * self.width_px, right * self.width_px,
                (1 - top) * self.height_px, (1 - bottom) * self.height_px)

    def key(self):
        return repr((self.width_px, self.height_px, tuple(self.axes_box), self.x_scale,
                     tuple(map(tuple, self.palette)), self.line_width_px,
                     tuple(self.background), self.data_margin))


@dataclass
class PlotImage:
    pixels: np.ndarray
    spec: PlotSpec = field(default_factory=PlotSpec)

    def to_uint8(self):
        return np.round(np.clip(self.pixels, 0, 1) * 255).astype(np.uint8)

    def sha256(self):
        return hashlib.sha256(self.to_uint8().tobytes()).hexdigest()


@dataclass(frozen=True)
class Limits:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float


# ---------------------------------------------------------------------------
# coordinate mapping


def data_to_pixel(t, y, limits: Limits, spec: PlotSpec):
    """Map data coordinates into the axes box; works elementwise on arrays."""
    x_left, x_right, y_top, y_bottom = spec.box_px()
    t = np.asarray(t, dtype=np.float64)
    if spec.log_x:
        if np.any(t <= 0):
            raise ValueError("log x axis needs positive time values")
        tx, lo, hi = np.log10(t), math.log10(limits.x_lo), math.log10(limits.x_hi)
    else:
        tx, lo, hi = t, limits.x_lo, limits.x_hi
    if hi <= lo or limits.y_hi <= limits.y_lo:
        raise ValueError(f"degenerate limits {limits}")
    x_px = x_left + (tx - lo) / (hi - lo) * (x_right - x_left)
    y_px = y_bottom - (np.asarray(y, dtype=np.float64) - limits.y_lo) / (limits.y_hi - limits.y_lo) * (y_bottom - y_top)
    return x_px, y_px


def auto_limits(series: Sequence[TimeSeries], spec: PlotSpec) -> Limits:
    log = spec.log_x
    ts, ys = [], []
    for s in series:
        ok = np.isfinite(s.values)
        ts.append(s.time_axis(log)[ok])
        ys.append(s.values[ok])
    t = np.concatenate(ts)
    y = np.concatenate(ys)
    if y.size == 0:
        raise ValueError("nothing to plot: all values are NaN")
    if log:
        if np.any(t <= 0):
            raise ValueError("log x axis needs positive time values")
        t = np.log10(t)
    m = spec.data_margin
    t_lo, t_hi = expand_degenerate(float(t.min()), float(t.max()))
    y_lo, y_hi = expand_degenerate(float(y.min()), float(y.max()))
    dt, dy = t_hi - t_lo, y_hi - y_lo
    t_lo, t_hi = t_lo - m * dt, t_hi + m * dt
    if log:
        t_lo, t_hi = 10.0 ** t_lo, 10.0 ** t_hi
    return Limits(t_lo, t_hi, y_lo - m * dy, y_hi + m * dy)


# ---------------------------------------------------------------------------
# drawing


def _edge_area(t, a, b):
    """Area of the unit pixel on the side ``n . p <= t`` of a line.

    ``a >= b >= 0`` are the absolute normal components (exact box filter).
    """
    half = 0.5 * (a + b)
    out = np.where(t >= half, 1.0, 0.0)
    lin = 0.5 + t / a
    if np.any(b > 1e-9):
        bb = np.maximum(b, 1e-12)
        low = (t + half) ** 2 / (2 * a * bb)
        high = 1 - (half - t) ** 2 / (2 * a * bb)
        inner = 0.5 * (a - b)
        ramp = np.where(t < -inner, low, np.where(t > inner, high, lin))
        ramp = np.where(b > 1e-9, ramp, lin)
    else:
        ramp = lin
    return np.where((t > -half) & (t < half), np.clip(ramp, 0, 1), out)


SUPERSAMPLE = 16
_HALF_DIAG = 0.5 * math.sqrt(2.0)


def _segments(pts):
    """Valid segments of a polyline plus flags telling which ends are free.

    A free end starts or finishes a run of connected segments and gets a
    square cap; every other end is a joint and gets a round join.
    """
    p0, p1 = pts[:-1], pts[1:]
    ok = np.all(np.isfinite(p0), axis=1) & np.all(np.isfinite(p1), axis=1)
    prev_ok = np.r_[False, ok[:-1]]
    next_ok = np.r_[ok[1:], False]
    return p0[ok], p1[ok], ~prev_ok[ok], ~next_ok[ok]


@numba.njit(cache=True)
def _sampled_union(cx, cy, starts, seg, p0, p1, ux, uy, lo, hi, length, join0, join1, half, n, out):
    # out[c] = fraction of an n x n sample grid in pixel c inside any listed stroke
    r2 = half * half
    for c in range(len(cx)):
        hits = 0
        for i in range(n):
            sy = cy[c] + (i + 0.5) / n - 0.5
            for j in range(n):
                sx = cx[c] + (j + 0.5) / n - 0.5
                for k in range(starts[c], starts[c + 1]):
                    g = seg[k]
                    rx = sx - p0[g, 0]
                    ry = sy - p0[g, 1]
                    if length[g] > 0:
                        along = rx * ux[g] + ry * uy[g]
                        if lo[g] <= along <= hi[g] and abs(ry * ux[g] - rx * uy[g]) <= half:
                            hits += 1
                            break
                    if (join0[g] or length[g] == 0) and rx * rx + ry * ry <= r2:
                        hits += 1
                        break
                    qx = sx - p1[g, 0]
                    qy = sy - p1[g, 1]
                    if join1[g] and qx * qx + qy * qy <= r2:
                        hits += 1
                        break
        out[c] = hits / (n * n)


def polyline_coverage(points, width, shape):
    """Per-pixel area coverage in [0, 1] of a stroked polyline.

    Joints are round and run ends are square caps extending ``width / 2``
    past the endpoint. Pixels crossed by a single straight stretch of stroke
    get the exact box-filtered area; pixels near joints, caps or crossings
    get the union of all strokes sampled on a 16x16 grid. Segments with a
    NaN endpoint are skipped, which breaks the line.
    """
    h, w = shape
    pts = np.asarray(points, dtype=np.float64)
    cov = np.zeros(h * w)
    if len(pts) < 2:
        return cov.reshape(h, w)
    p0, p1, free0, free1 = _segments(pts)
    if len(p0) == 0:
        return cov.reshape(h, w)
    half = width / 2
    d = p1 - p0
    length = np.hypot(d[:, 0], d[:, 1])
    safe = np.where(length > 0, length, 1.0)
    ux, uy = d[:, 0] / safe, d[:, 1] / safe
    lo = np.where(free0, -half, 0.0)
    hi = length + np.where(free1, half, 0.0)

    # candidate (segment, pixel) pairs from padded bounding boxes
    reach = half * math.sqrt(2.0) + 1
    x0 = np.clip(np.floor(np.minimum(p0[:, 0], p1[:, 0]) - reach), 0, w - 1).astype(np.int64)
    x1 = np.clip(np.ceil(np.maximum(p0[:, 0], p1[:, 0]) + reach), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(np.minimum(p0[:, 1], p1[:, 1]) - reach), 0, h - 1).astype(np.int64)
    y1 = np.clip(np.ceil(np.maximum(p0[:, 1], p1[:, 1]) + reach), 0, h - 1).astype(np.int64)
    bw, bh = x1 - x0 + 1, y1 - y0 + 1
    sizes = bw * bh
    seg = np.repeat(np.arange(len(p0)), sizes)
    local = np.arange(sizes.sum()) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    px = x0[seg] + local % bw[seg]
    py = y0[seg] + local // bw[seg]

    rx, ry = px - p0[seg, 0], py - p0[seg, 1]
    along = rx * ux[seg] + ry * uy[seg]
    across = -rx * uy[seg] + ry * ux[seg]
    # distance from the pixel centre to the stroke's skeleton, caps included
    t = np.clip(along, lo[seg], hi[seg])
    gap = np.hypot(along - t, across)
    touches = gap <= half + _HALF_DIAG
    seg, px, py, along, across = seg[touches], px[touches], py[touches], along[touches], across[touches]
    pix = py * w + px
    count = np.bincount(pix, minlength=h * w)

    # the pixel square lies strictly between the stroke's ends: plain strip area
    clear = (count[pix] == 1) & (length[seg] > 0) \
        & (along - _HALF_DIAG >= lo[seg]) & (along + _HALF_DIAG <= hi[seg])
    na = np.maximum(np.abs(ux[seg]), np.abs(uy[seg]))
    nb = np.minimum(np.abs(ux[seg]), np.abs(uy[seg]))
    a_, c_ = na[clear], nb[clear]
    strip = _edge_area(half - across[clear], a_, c_) - _edge_area(-half - across[clear], a_, c_)
    cov[pix[clear]] = strip

    # everything else: sample the union of all strokes touching the pixel
    rest = ~clear
    if rest.any():
        seg, pix = seg[rest], pix[rest]
        order = np.argsort(pix, kind="stable")
        seg, pix = seg[order], pix[order]
        cells, starts = np.unique(pix, return_index=True)
        starts = np.r_[starts, len(pix)].astype(np.int64)
        out = np.empty(len(cells))
        _sampled_union((cells % w).astype(np.float64), (cells // w).astype(np.float64), starts, seg,
                       p0, p1, ux, uy, lo, hi, length, ~free0, ~free1, half, SUPERSAMPLE, out)
        cov[cells] = out
    return cov.reshape(h, w)


def _blend(image, coverage, color):
    col = np.asarray(color, dtype=np.float64) / 255.0
    alpha = coverage[:, :, None]
    image *= 1 - alpha
    image += alpha * col
    return image


def draw_polyline(image, points, color, width):
    """Blend an anti-aliased polyline into ``image`` (float HxWx3, modified in place)."""
    if len(points) < 2:
        raise ValueError("a polyline needs at least 2 points")
    cov = polyline_coverage(points, width, image.shape[:2])
    return _blend(image, cov, color)


def draw_label(image, text, anchor_px, color=(0, 0, 0), halign="left", valign="top"):
    """Stamp ``text`` with the bitmap font; pixels falling off the canvas are dropped."""
    mask = font.text_bitmap(text)
    gh, gw = mask.shape
    ax, ay = anchor_px
    x = int(round(ax - {"left": 0, "center": gw / 2, "right": gw}[halign]))
    y = int(round(ay - {"top": 0, "center": gh / 2, "bottom": gh}[valign]))
    h, w = image.shape[:2]
    sx0, sy0 = max(0, -x), max(0, -y)
    sx1, sy1 = min(gw, w - x), min(gh, h - y)
    if sx1 <= sx0 or sy1 <= sy0:
        return image
    region = image[y + sy0:y + sy1, x + sx0:x + sx1]
    on = mask[sy0:sy1, sx0:sx1].astype(bool)
    region[on] = np.asarray(color, dtype=np.float64) / 255.0
    return image


def _draw_axes(image, limits, spec):
    black = (0, 0, 0)
    x_left, x_right, y_top, y_bottom = (float(round(v)) for v in spec.box_px())
    frame = [(x_left, y_top), (x_right, y_top), (x_right, y_bottom), (x_left, y_bottom), (x_left, y_top)]
    cov = polyline_coverage(frame, FRAME_WIDTH, image.shape[:2])

    xticks = nice_ticks(limits.x_lo, limits.x_hi, X_TICK_TARGET, log=spec.log_x)
    yticks = nice_ticks(limits.y_lo, limits.y_hi, Y_TICK_TARGET)
    xpx, _ = data_to_pixel(np.array(xticks, dtype=np.float64), np.zeros(len(xticks)), limits, spec)
    _, ypx = data_to_pixel(np.ones(len(yticks)), np.array(yticks, dtype=np.float64), limits, spec)
    for tx in np.round(xpx):
        seg = [(tx, y_bottom), (tx, y_bottom + TICK_LENGTH)]
        cov = np.maximum(cov, polyline_coverage(seg, FRAME_WIDTH, image.shape[:2]))
    for ty in np.round(ypx):
        seg = [(x_left - TICK_LENGTH, ty), (x_left, ty)]
        cov = np.maximum(cov, polyline_coverage(seg, FRAME_WIDTH, image.shape[:2]))
    _blend(image, cov, black)

    for value, tx in zip(xticks, np.round(xpx)):
        draw_label(image, format_tick(value), (tx, y_bottom + TICK_LENGTH + TICK_PAD), black, "center", "top")
    for value, ty in zip(yticks, np.round(ypx)):
        draw_label(image, format_tick(value), (x_left - TICK_LENGTH - TICK_PAD, ty), black, "right", "center")


def render_plot(series: Sequence[TimeSeries], spec: PlotSpec = PlotSpec()) -> PlotImage:
    """Render one or more series on shared, auto-ranged axes."""
    if not series:
        raise ValueError("render_plot needs at least one series")
    for s in series:
        if len(s) < 2:
            raise ValueError(f"series {s.name!r} has {len(s)} point(s); at least 2 are needed")
        if not np.any(np.isfinite(s.values)):
            raise ValueError(f"series {s.name!r} is entirely NaN")
    limits = auto_limits(series, spec)
    image = np.empty((spec.height_px, spec.width_px, 3), dtype=np.float64)
    image[:] = np.asarray(spec.background, dtype=np.float64) / 255.0
    for i, s in enumerate(series):
        x, y = data_to_pixel(s.time_axis(spec.log_x), s.values, limits, spec)
        color = spec.palette[i % len(spec.palette)]
        draw_polyline(image, np.column_stack([x, y]), color, spec.line_width_px)
    _draw_axes(image, limits, spec)
    return PlotImage(image, spec)


def series_key(series: Sequence[TimeSeries], spec: PlotSpec) -> str:
    """Content hash of a render request, used as an image cache key."""
    h = hashlib.sha256(f"r{RENDERER_VERSION}|{spec.key()}".encode())
    for s in series:
        h.update(b"S")
        h.update(s.values.astype("<f8").tobytes())
        if s.timestamps is not None:
            h.update(b"T")
            h.update(s.timestamps.astype("<f8").tobytes())
    return h.hexdigest()
