"""Toolpath generation: snake rasters, polygon infill and slicer-style feedforward.

A :class:`Trajectory` is a constant-feed-rate polyline. Per-vertex attributes
(layer height, pass number, extrusion flag, annotation) apply to the segment
that starts at that vertex. :meth:`Trajectory.sample` turns it into a
:class:`SampledPath` on a fixed time grid, which is what the simulation loop
consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

FORCE_REFERENCE = "force_reference"
FEEDFORWARD = "feedforward_wheel_speed"
ANNOTATION_KINDS = (FORCE_REFERENCE, FEEDFORWARD)

# sanity bound on slicer widths/heights, in nozzle diameters
_SLICER_BOUND = 10.0
_MIN_POLYGON_AREA = 1e-9


class PlannerError(ValueError):
    """Invalid planner input (nonpositive sizes, bad polygon, bad schedule)."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SlicerParams:
    nozzle_diameter: float = 0.15
    line_width: float = 0.15
    layer_height: float = 0.05
    feed_rate: float = 100.0
    filament_diameter: float = 1.75

    def __post_init__(self):
        for name in ("nozzle_diameter", "line_width", "layer_height", "feed_rate", "filament_diameter"):
            if not getattr(self, name) > 0:
                raise PlannerError(f"{name} must be positive, got {getattr(self, name)!r}")
        bound = _SLICER_BOUND * self.nozzle_diameter
        if self.line_width >= bound or self.layer_height >= bound:
            raise PlannerError("line_width and layer_height must stay below 10 nozzle diameters")


def filament_area(filament_diameter: float) -> float:
    return math.pi * (filament_diameter / 2.0) ** 2


def feedforward_wheel_speed(p: SlicerParams) -> float:
    """Filament feed speed (mm/s) that deposits a ``line_width`` x ``layer_height`` bead."""
    return p.line_width * p.layer_height * p.feed_rate / filament_area(p.filament_diameter)


def _feedforward_unchecked(line_width, layer_height, feed_rate, filament_diameter) -> float:
    # same formula without SlicerParams validation, so w = 0 is allowed
    return line_width * layer_height * feed_rate / filament_area(filament_diameter)


@dataclass(frozen=True)
class Trajectory:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    layer_height: np.ndarray
    pass_id: np.ndarray
    extruding: np.ndarray
    feed_rate: float
    annotation_kind: str | None = None
    annotation: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.x)
        if n < 2:
            raise PlannerError("a trajectory needs at least two points")
        for name in ("y", "t", "layer_height", "pass_id", "extruding"):
            if len(getattr(self, name)) != n:
                raise PlannerError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if not self.feed_rate > 0:
            raise PlannerError("feed_rate must be positive")
        dt = np.diff(self.t)
        if np.any(dt <= 0):
            raise PlannerError("timestamps must be strictly increasing")
        seg = np.hypot(np.diff(self.x), np.diff(self.y))
        speed = seg / dt
        if np.any(np.abs(speed - self.feed_rate) > 1e-9 * self.feed_rate):
            raise PlannerError("point spacing is inconsistent with the feed rate")
        if np.any(~(self.layer_height > 0)):
            raise PlannerError("layer_height must be positive at every point")
        if self.annotation_kind is None:
            if self.annotation is not None:
                raise PlannerError("annotation values given without an annotation kind")
        else:
            if self.annotation_kind not in ANNOTATION_KINDS:
                raise PlannerError(f"unknown annotation kind {self.annotation_kind!r}")
            if self.annotation is None or len(self.annotation) != n:
                raise PlannerError("annotation must have one value per point")
            if np.any(~np.isfinite(self.annotation)) or np.any(self.annotation < 0):
                raise PlannerError("annotation values must be finite and nonnegative")

    @classmethod
    def from_points(
        cls,
        points: Sequence[tuple[float, float]],
        feed_rate: float,
        layer_height: float | Sequence[float] = 0.05,
        pass_id: Sequence[int] | None = None,
        extruding: Sequence[bool] | None = None,
    ) -> "Trajectory":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PlannerError("points must be a sequence of (x, y) pairs")
        if not feed_rate > 0:
            raise PlannerError("feed_rate must be positive")
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        t = np.concatenate([[0.0], np.cumsum(seg)]) / feed_rate
        n = len(pts)
        h = np.broadcast_to(np.asarray(layer_height, dtype=float), (n,))
        pid = np.ones(n, dtype=int) if pass_id is None else np.asarray(pass_id, dtype=int)
        ext = np.ones(n, dtype=bool) if extruding is None else np.asarray(extruding, dtype=bool)
        return cls(
            x=_frozen(pts[:, 0]),
            y=_frozen(pts[:, 1]),
            t=_frozen(t),
            layer_height=_frozen(h),
            pass_id=_frozen(pid, int),
            extruding=_frozen(ext, bool),
            feed_rate=float(feed_rate),
        )

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))

    @property
    def n_passes(self) -> int:
        return int(self.pass_id.max())

    def with_layer_height(self, h) -> "Trajectory":
        """Replace layer heights; ``h`` is an array or a callable ``h(x, y)``."""
        if callable(h):
            vals = [h(xi, yi) for xi, yi in zip(self.x.tolist(), self.y.tolist())]
        else:
            vals = np.broadcast_to(np.asarray(h, dtype=float), self.x.shape)
        return replace(self, layer_height=_frozen(vals))

    def with_annotation(self, kind: str, values) -> "Trajectory":
        vals = np.broadcast_to(np.asarray(values, dtype=float), self.x.shape)
        return replace(self, annotation_kind=kind, annotation=_frozen(vals))

    def reversed(self) -> "Trajectory":
        rev = Trajectory.from_points(self.points[::-1], self.feed_rate)
        # attributes belong to the segment starting at a vertex, so they shift by one on reversal
        def flip(a):
            a = np.asarray(a)
            return np.concatenate([a[-2::-1], a[:1]]) if len(a) > 1 else a[::-1]

        return replace(
            rev,
            layer_height=_frozen(self.layer_height[::-1]),
            pass_id=_frozen(flip(self.pass_id), int),
            extruding=_frozen(flip(self.extruding), bool),
            annotation_kind=self.annotation_kind,
            annotation=None if self.annotation is None else _frozen(flip(self.annotation)),
        )

    def repeated(self, times: int) -> "Trajectory":
        """Concatenate identical copies of the path (identical repeated layers)."""
        if times < 1:
            raise PlannerError("times must be >= 1")
        if times == 1:
            return self
        pts = self.points
        out_pts = list(pts)
        pid = list(self.pass_id)
        ext = list(self.extruding)
        h = list(self.layer_height)
        ann = None if self.annotation is None else list(self.annotation)
        for k in range(1, times):
            # travel back to the start of the layer
            ext[-1] = False
            if ann is not None:
                ann[-1] = 0.0
            out_pts += pts
            pid += [p + k * self.n_passes for p in self.pass_id]
            ext += list(self.extruding)
            h += list(self.layer_height)
            if ann is not None:
                ann += list(self.annotation)
        # duplicate point where last end equals first start would give a zero-length segment
        keep = [0] + [i for i in range(1, len(out_pts)) if out_pts[i] != out_pts[i - 1]]
        traj = Trajectory.from_points([out_pts[i] for i in keep], self.feed_rate, [h[i] for i in keep],
                                      [pid[i] for i in keep], [ext[i] for i in keep])
        if ann is not None:
            traj = traj.with_annotation(self.annotation_kind, [ann[i] for i in keep])
        return traj

    def sample(self, dt: float) -> "SampledPath":
        """Resample on the grid ``t_k = k * dt`` for ``k < ceil(duration / dt)``."""
        if not dt > 0:
            raise PlannerError("sample period must be positive")
        n = int(math.ceil(self.duration / dt - 1e-9))
        if n < 1:
            raise PlannerError("trajectory has zero duration")
        tk = np.arange(n) * dt
        seg = np.clip(np.searchsorted(self.t, tk, side="right") - 1, 0, len(self.t) - 2)
        x = np.interp(tk, self.t, self.x)
        y = np.interp(tk, self.t, self.y)
        s = tk * self.feed_rate
        ann = None if self.annotation is None else self.annotation[seg]
        return SampledPath(
            t=tk, x=x, y=y, s=s,
            layer_height=self.layer_height[seg].copy(),
            pass_id=self.pass_id[seg].copy(),
            extruding=self.extruding[seg].copy(),
            feed_rate=self.feed_rate,
            annotation_kind=self.annotation_kind,
            annotation=ann,
        )


@dataclass
class SampledPath:
    """A trajectory on the simulation time grid. ``s`` is arc length in mm."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    layer_height: np.ndarray
    pass_id: np.ndarray
    extruding: np.ndarray
    feed_rate: float
    annotation_kind: str | None = None
    annotation: np.ndarray | None = None
    feed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.feed = np.full(len(self.t), float(self.feed_rate))

    def __len__(self) -> int:
        return len(self.t)


def make_snake(
    line_length: float = 40.0,
    n_lines: int = 40,
    spacing: float = 1.0,
    origin: tuple[float, float] = (-20.0, -20.0),
    feed_rate: float = 100.0,
    layer_height: float = 0.05,
) -> Trajectory:
    """Continuous raster of ``n_lines`` X-lines joined by ``spacing``-long Y steps.

    Pass ``k`` is line ``k`` plus the connector that follows it.
    """
    if not (n_lines >= 1 and line_length > 0 and spacing > 0 and feed_rate > 0):
        raise PlannerError("snake needs n_lines >= 1 and positive length, spacing and feed rate")
    x0, y0 = origin
    pts, pid = [], []
    for k in range(int(n_lines)):
        y = y0 + k * spacing
        xs = (x0, x0 + line_length) if k % 2 == 0 else (x0 + line_length, x0)
        pts += [(xs[0], y), (xs[1], y)]
        pid += [k + 1, k + 1]
    return Trajectory.from_points(pts, feed_rate, layer_height, pid)


# ---------------------------------------------------------------- polygons

def polygon_area(polygon: Sequence[tuple[float, float]]) -> float:
    p = np.asarray(polygon, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15 and \
            min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2)) or \
        (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2))


def check_polygon(polygon: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    poly = [(float(a), float(b)) for a, b in polygon]
    if len(poly) > 1 and poly[0] == poly[-1]:
        poly = poly[:-1]
    if len(poly) < 3 or abs(polygon_area(poly)) < _MIN_POLYGON_AREA:
        raise PlannerError("degenerate polygon (area below 1e-9 mm^2)")
    n = len(poly)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                raise PlannerError(f"self-intersecting polygon (edges {i} and {j})")
    return poly


def point_in_polygon(pt: tuple[float, float], polygon: Sequence[tuple[float, float]], tol: float = 1e-9) -> bool:
    """Even-odd test; points within ``tol`` of an edge count as inside."""
    px, py = pt
    n = len(polygon)
    inside = False
    for i in range(n):
        (ax, ay), (bx, by) = polygon[i], polygon[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        u = 0.0 if L2 == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
        if math.hypot(px - ax - u * dx, py - ay - u * dy) <= tol:
            return True
        if (ay > py) != (by > py):
            xc = ax + (py - ay) * dx / dy
            if px < xc:
                inside = not inside
    return inside


def scanline_heights(polygon, line_spacing: float) -> np.ndarray:
    """Scanline Y positions, centred on the polygon's Y extent."""
    ys = [p[1] for p in polygon]
    lo, hi = min(ys), max(ys)
    n = max(1, int(math.floor((hi - lo) / line_spacing + 1e-9)))
    mid = 0.5 * (lo + hi)
    return mid + (np.arange(n) - (n - 1) / 2.0) * line_spacing


def scanline_intervals(polygon, y: float) -> list[tuple[float, float, float, float]]:
    """Inside intervals of the horizontal line at ``y``.

    Returns ``(x_start, x_end, boundary_pos_start, boundary_pos_end)`` sorted by X,
    where boundary positions are arc-length coordinates along the polygon outline.
    """
    n = len(polygon)
    edge_len = [math.dist(polygon[i], polygon[(i + 1) % n]) for i in range(n)]
    offsets = np.concatenate([[0.0], np.cumsum(edge_len)])
    hits = []
    for i in range(n):
        (ax, ay), (bx, by) = polygon[i], polygon[(i + 1) % n]
        if ay == by:
            continue
        if min(ay, by) <= y < max(ay, by):
            u = (y - ay) / (by - ay)
            hits.append((ax + u * (bx - ax), offsets[i] + u * edge_len[i]))
    hits.sort()
    out = []
    for k in range(0, len(hits) - 1, 2):
        (x0, b0), (x1, b1) = hits[k], hits[k + 1]
        if x1 - x0 > 1e-12:
            out.append((x0, x1, b0, b1))
    return out


def _boundary_walk(polygon, b_from: float, b_to: float):
    """Shorter way round the outline between two arc-length positions."""
    n = len(polygon)
    edge_len = [math.dist(polygon[i], polygon[(i + 1) % n]) for i in range(n)]
    offsets = np.concatenate([[0.0], np.cumsum(edge_len)])[:-1]
    perim = sum(edge_len)
    fwd = (b_to - b_from) % perim
    bwd = (b_from - b_to) % perim
    if fwd <= bwd:
        ahead = [((o - b_from) % perim, i) for i, o in enumerate(offsets)]
        verts = [polygon[i] for d, i in sorted(ahead) if 0 < d < fwd]
        return fwd, verts
    behind = [((b_from - o) % perim, i) for i, o in enumerate(offsets)]
    verts = [polygon[i] for d, i in sorted(behind) if 0 < d < bwd]
    return bwd, verts


def make_star_infill(
    polygon: Sequence[tuple[float, float]],
    line_spacing: float = 0.15,
    feed_rate: float = 100.0,
    layer_height: float = 0.05,
    max_connector: float | None = None,
) -> Trajectory:
    """Boustrophedon parallel infill of a simple polygon.

    Scanlines run along X at increasing Y, alternating direction. Consecutive
    intervals are joined along the outline when that walk is shorter than
    ``max_connector`` (default three line spacings); otherwise by a straight
    travel move flagged as non-extruding.
    """
    if not line_spacing > 0 or not feed_rate > 0:
        raise PlannerError("line_spacing and feed_rate must be positive")
    poly = check_polygon(polygon)
    if polygon_area(poly) < 0:
        poly = poly[::-1]
    if max_connector is None:
        max_connector = 3.0 * line_spacing
    pts: list[tuple[float, float]] = []
    pid: list[int] = []
    ext: list[bool] = []
    prev_b = None
    k = 0
    for row, y in enumerate(scanline_heights(poly, line_spacing)):
        ivs = scanline_intervals(poly, float(y))
        if row % 2 == 1:
            ivs = [(x1, x0, b1, b0) for x0, x1, b0, b1 in reversed(ivs)]
        for xa, xb, ba, bb in ivs:
            k += 1
            if pts:
                dist, verts = _boundary_walk(poly, prev_b, ba)
                if dist <= max_connector:
                    for v in verts:
                        pts.append(v)
                        pid.append(k - 1)
                        ext.append(True)
                else:
                    ext[-1] = False
            pts += [(xa, float(y)), (xb, float(y))]
            pid += [k, k]
            ext += [True, True]
            prev_b = bb
    if not pts:
        raise PlannerError("polygon produced no scanlines")
    keep = [0] + [i for i in range(1, len(pts)) if math.dist(pts[i], pts[i - 1]) > 1e-12]
    return Trajectory.from_points([pts[i] for i in keep], feed_rate, layer_height,
                                  [pid[i] for i in keep], [ext[i] for i in keep])


def scanline_segments(traj: Trajectory) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """The horizontal extruding segments of an infill trajectory (one per pass)."""
    out = []
    for i in range(len(traj.x) - 1):
        if traj.extruding[i] and traj.y[i] == traj.y[i + 1] and traj.pass_id[i] == traj.pass_id[i + 1]:
            out.append(((float(traj.x[i]), float(traj.y[i])), (float(traj.x[i + 1]), float(traj.y[i + 1]))))
    return out


# ---------------------------------------------------------------- annotations

def annotate_force_reference(traj: Trajectory, schedule: Iterable[tuple[tuple[int, int], float]]) -> Trajectory:
    """Assign a force reference per pass range.

    ``schedule`` holds ``((first_pass, last_pass), force_N)`` with 1-based
    inclusive ranges that must partition passes ``1..n_passes``. Travel
    segments get a zero reference.
    """
    n = traj.n_passes
    level = np.full(n + 1, np.nan)
    for (lo, hi), value in schedule:
        lo, hi = int(lo), int(hi)
        if not (1 <= lo <= hi <= n):
            raise PlannerError(f"pass range {lo}-{hi} outside 1-{n}")
        if not (math.isfinite(value) and value >= 0):
            raise PlannerError("force references must be finite and nonnegative")
        if np.any(~np.isnan(level[lo:hi + 1])):
            raise PlannerError(f"overlapping schedule at passes {lo}-{hi}")
        level[lo:hi + 1] = value
    missing = np.flatnonzero(np.isnan(level[1:])) + 1
    if missing.size:
        raise PlannerError(f"incomplete schedule: passes {missing.tolist()} have no reference")
    vals = np.where(traj.extruding, level[traj.pass_id], 0.0)
    return traj.with_annotation(FORCE_REFERENCE, vals)


def stepwise_schedule(n_passes: int, start: float, increment: float, every: int) -> list[tuple[tuple[int, int], float]]:
    """Reference raised by ``increment`` every ``every`` passes."""
    if every < 1 or n_passes < 1:
        raise PlannerError("every and n_passes must be >= 1")
    out = []
    for i, lo in enumerate(range(1, n_passes + 1, every)):
        hi = min(lo + every - 1, n_passes)
        out.append(((lo, hi), round(start + i * increment, 12)))
    return out


def annotate_feedforward(traj: Trajectory, wheel_speed: float) -> Trajectory:
    """Constant feedforward wheel speed on extruding segments, zero on travel."""
    if not (math.isfinite(wheel_speed) and wheel_speed >= 0):
        raise PlannerError("wheel speed must be finite and nonnegative")
    return traj.with_annotation(FEEDFORWARD, np.where(traj.extruding, wheel_speed, 0.0))
