import math

import numpy as np
import pytest

from fcpsim.harness import default_star_polygon
from fcpsim.planner import (
    FEEDFORWARD,
    FORCE_REFERENCE,
    PlannerError,
    SlicerParams,
    Trajectory,
    annotate_feedforward,
    annotate_force_reference,
    check_polygon,
    feedforward_wheel_speed,
    make_snake,
    make_star_infill,
    point_in_polygon,
    polygon_area,
    scanline_segments,
    stepwise_schedule,
)


def test_snake_endpoints_and_length():
    s = make_snake(40.0, 40, 1.0, (-20.0, -20.0), 100.0)
    assert s.points[0] == (-20.0, -20.0)
    assert s.points[-1] == (-20.0, 19.0)
    assert s.length == pytest.approx(40 * 40 + 39 * 1, abs=1e-9)
    assert s.duration == pytest.approx(16.39, abs=1e-12)
    assert s.n_passes == 40


def test_snake_single_line():
    s = make_snake(10.0, 1, 1.0, (0.0, 0.0), 100.0)
    assert s.points == [(0.0, 0.0), (10.0, 0.0)]
    assert s.duration == pytest.approx(0.1)


def test_snake_alternates_direction():
    s = make_snake(5.0, 4, 1.0, (0.0, 0.0), 50.0)
    xs = [p[0] for p in s.points]
    assert xs == [0.0, 5.0, 5.0, 0.0, 0.0, 5.0, 5.0, 0.0]


@pytest.mark.parametrize("kw", [dict(n_lines=0), dict(line_length=0.0), dict(spacing=-1.0), dict(feed_rate=0.0)])
def test_snake_rejects_bad_input(kw):
    with pytest.raises(PlannerError):
        make_snake(**kw)


def test_timestamps_follow_feed_rate():
    s = make_snake(3.0, 3, 0.5, (0.0, 0.0), 25.0)
    seg = np.hypot(np.diff(s.x), np.diff(s.y))
    np.testing.assert_allclose(seg / np.diff(s.t), 25.0, rtol=1e-12)


def test_trajectory_arrays_are_read_only():
    s = make_snake(3.0, 2, 1.0)
    with pytest.raises(ValueError):
        s.x[0] = 1.0


def test_trajectory_rejects_inconsistent_feed():
    s = make_snake(3.0, 2, 1.0)
    with pytest.raises(PlannerError):
        Trajectory(s.x, s.y, s.t * 2, s.layer_height, s.pass_id, s.extruding, s.feed_rate)


def test_reverse_round_trip():
    s = make_snake(7.0, 5, 0.3, (1.0, 2.0), 80.0)
    rr = s.reversed().reversed()
    assert rr.points == s.points
    np.testing.assert_array_equal(rr.t, s.t)
    np.testing.assert_array_equal(rr.pass_id, s.pass_id)


def test_sample_grid_length():
    s = make_snake(40.0, 40, 1.0, (-20.0, -20.0), 100.0)
    sp = s.sample(1e-3)
    assert len(sp) == 16390
    assert sp.t[1] - sp.t[0] == pytest.approx(1e-3)
    assert sp.s[-1] == pytest.approx(1638.9)


# -- slicer feedforward

def test_feedforward_examples():
    assert feedforward_wheel_speed(SlicerParams(line_width=0.075)) == pytest.approx(0.375 / (math.pi * 0.875 ** 2))
    assert feedforward_wheel_speed(SlicerParams(line_width=0.075)) == pytest.approx(0.1559, abs=5e-5)
    assert feedforward_wheel_speed(SlicerParams(line_width=0.15)) == pytest.approx(0.3118, abs=5e-5)


def test_feedforward_zero_width_rejected_by_params():
    with pytest.raises(PlannerError):
        SlicerParams(line_width=0.0)


def test_slicer_sanity_bound():
    with pytest.raises(PlannerError):
        SlicerParams(layer_height=2.0)


# -- polygons and infill

def _oracle_lengths(poly, ys):
    """Brute-force chord lengths: dense sampling along each scanline."""
    xs = np.linspace(min(p[0] for p in poly) - 1, max(p[0] for p in poly) + 1, 20001)
    dx = xs[1] - xs[0]
    return [sum(point_in_polygon((x, y), poly) for x in xs) * dx for y in ys]


def test_unit_square_infill():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    segs = scanline_segments(make_star_infill(sq, 0.5, 100.0))
    assert [round(a[1], 12) for a, _ in segs] == [0.25, 0.75]
    for a, b in segs:
        assert abs(b[0] - a[0]) == pytest.approx(1.0)


def test_rectangle_infill_six_lines():
    rect = [(0, 0), (2, 0), (2, 1), (0, 1)]
    segs = scanline_segments(make_star_infill(rect, 0.15, 100.0))
    assert len(segs) == 6
    for a, b in segs:
        assert abs(b[0] - a[0]) == pytest.approx(2.0)
    ys = [a[1] for a, _ in segs]
    assert ys == sorted(ys)
    assert np.diff(ys) == pytest.approx([0.15] * 5)


def test_rotated_square_is_symmetric():
    d = [(0, -1), (1, 0), (0, 1), (-1, 0)]
    segs = scanline_segments(make_star_infill(d, 0.2, 100.0))
    lengths = [abs(b[0] - a[0]) for a, b in segs]
    assert lengths == pytest.approx(lengths[::-1], abs=1e-12)


def test_star_chords_match_oracle():
    poly = default_star_polygon()
    traj = make_star_infill(poly, 0.5, 100.0)
    segs = scanline_segments(traj)
    by_y = {}
    for a, b in segs:
        by_y[a[1]] = by_y.get(a[1], 0.0) + abs(b[0] - a[0])
    ys = sorted(by_y)
    oracle = _oracle_lengths(poly, ys)
    np.testing.assert_allclose([by_y[y] for y in ys], oracle, atol=5e-3)


def test_star_points_inside_polygon():
    poly = default_star_polygon()
    traj = make_star_infill(poly, 0.15, 100.0)
    sp = traj.sample(1e-3)
    ext = sp.extruding
    assert all(point_in_polygon((x, y), poly, tol=1e-7) for x, y in zip(sp.x[ext], sp.y[ext]))


def test_star_direction_alternates_by_row():
    traj = make_star_infill([(0, 0), (4, 0), (4, 1), (0, 1)], 0.25, 100.0)
    segs = scanline_segments(traj)
    signs = [np.sign(b[0] - a[0]) for a, b in segs]
    assert signs == [1, -1, 1, -1]


def test_star_long_jumps_are_travel():
    # two prongs: rows cross a gap, so the second interval is reached by travel
    u = [(0, 0), (5, 0), (5, 3), (3, 3), (3, 1), (2, 1), (2, 3), (0, 3)]
    traj = make_star_infill(u, 0.2, 100.0)
    assert not traj.extruding.all()
    assert traj.extruding.any()


def test_default_star_is_simple_and_nonconvex():
    poly = check_polygon(default_star_polygon())
    assert len(poly) == 10
    assert polygon_area(poly) > 0
    # a reflex vertex exists
    p = np.asarray(poly)
    v1 = np.roll(p, -1, axis=0) - p
    v2 = np.roll(p, -2, axis=0) - np.roll(p, -1, axis=0)
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    assert (cross < 0).any() and (cross > 0).any()


def test_bowtie_rejected():
    with pytest.raises(PlannerError):
        make_star_infill([(0, 0), (1, 1), (1, 0), (0, 1)], 0.1, 100.0)


def test_degenerate_polygon_rejected():
    with pytest.raises(PlannerError):
        make_star_infill([(0, 0), (1, 0), (2, 0)], 0.1, 100.0)


# -- annotations

def test_stepwise_schedule_levels():
    sched = stepwise_schedule(40, 0.2, 0.1, 7)
    assert [v for _, v in sched] == pytest.approx([0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    assert sched[-1][0] == (36, 40)
    traj = annotate_force_reference(make_snake(), sched)
    assert traj.annotation_kind == FORCE_REFERENCE
    last = traj.annotation[traj.pass_id >= 36]
    assert np.all(last == 0.7)


def test_reference_changes_only_at_pass_boundaries():
    traj = annotate_force_reference(make_snake(), stepwise_schedule(40, 0.2, 0.1, 7))
    changes = np.flatnonzero(np.diff(traj.annotation))
    for i in changes:
        assert traj.pass_id[i] != traj.pass_id[i + 1]


def test_constant_schedule():
    traj = annotate_force_reference(make_snake(), [((1, 40), 0.2)])
    assert np.all(traj.annotation == 0.2)


def test_annotation_preserves_geometry():
    s = make_snake()
    a = annotate_force_reference(s, [((1, 40), 0.2)])
    assert a.points == s.points
    np.testing.assert_array_equal(a.t, s.t)


def test_incomplete_schedule():
    with pytest.raises(PlannerError, match="incomplete"):
        annotate_force_reference(make_snake(), [((1, 39), 0.2)])


def test_overlapping_schedule():
    with pytest.raises(PlannerError, match="overlap"):
        annotate_force_reference(make_snake(), [((1, 20), 0.2), ((20, 40), 0.3)])


def test_feedforward_zero_on_travel():
    u = [(0, 0), (5, 0), (5, 3), (3, 3), (3, 1), (2, 1), (2, 3), (0, 3)]
    traj = annotate_feedforward(make_star_infill(u, 0.2, 100.0), 0.16)
    assert traj.annotation_kind == FEEDFORWARD
    np.testing.assert_array_equal(traj.annotation == 0.0, ~traj.extruding)


def test_repeated_layers():
    s = make_star_infill([(0, 0), (2, 0), (2, 1), (0, 1)], 0.25, 100.0)
    r = s.repeated(3)
    assert r.n_passes == 3 * s.n_passes
    assert r.duration > 3 * s.duration
