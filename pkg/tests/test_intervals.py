from contextlib import nullcontext

import numpy as np
import pytest

from salad.autodiff import Tensor
from salad.exceptions import IntervalError
from salad.intervals import (
    Interval,
    OffsetPair,
    segment_from_offsets,
    segments_from_offsets,
    tiou,
    tiou_matrix,
    tiou_raw,
    tiou_raw_tensor,
)


@pytest.mark.parametrize(
    "a, b, expected",
    (
        pytest.param((0, 4), (0, 4), 1.0, id="identical"),
        pytest.param((0, 4), (1, 3), 0.5, id="nested"),
        pytest.param((0, 1), (2, 3), -1 / 3, id="disjoint"),
        pytest.param((2, 6), (4, 8), 1 / 3, id="overlap"),
        pytest.param((1, 1), (1, 1), 1.0, id="same-point"),
    ),
)
def test_tiou_raw(a, b, expected):
    assert tiou_raw(Interval(*a), Interval(*b)) == pytest.approx(expected)
    assert tiou_raw(Interval(*b), Interval(*a)) == pytest.approx(expected)


@pytest.mark.parametrize(
    "a, b, expected",
    (
        pytest.param((0, 1), (2, 3), 0.0, id="disjoint"),
        pytest.param((0, 4), (1, 3), 0.5, id="nested"),
        pytest.param((2, 6), (4, 8), 1 / 3, id="overlap"),
    ),
)
def test_tiou_clamps(a, b, expected):
    assert tiou(Interval(*a), Interval(*b)) == pytest.approx(expected)


def test_tiou_raw_two_distinct_points():
    # hull of [1,1] and [2,2] has length 1, so the value is -1
    assert tiou_raw(Interval(1, 1), Interval(2, 2)) == pytest.approx(-1.0)


@pytest.mark.parametrize(
    "start, end, expectation",
    (
        pytest.param(0, 1, nullcontext(), id="ok"),
        pytest.param(1, 1, nullcontext(), id="point"),
        pytest.param(2, 1, pytest.raises(IntervalError), id="reversed"),
        pytest.param(0, float("nan"), pytest.raises(IntervalError), id="nan"),
        pytest.param(float("-inf"), 0, pytest.raises(IntervalError), id="inf"),
    ),
)
def test_interval_validation(start, end, expectation):
    with expectation:
        Interval(start, end)


@pytest.mark.parametrize(
    "t, off, scale, expected",
    (
        pytest.param(5, (0, 0), 10, (5, 5), id="zero-offsets"),
        pytest.param(5, (0.2, 0.3), 10, (3, 8), id="scaled"),
        pytest.param(0, (1, 1), 4, (-4, 4), id="negative-start"),
    ),
)
def test_segment_from_offsets(t, off, scale, expected):
    segment = segment_from_offsets(t, OffsetPair(*off), scale)
    assert (segment.start, segment.end) == pytest.approx(expected)
    assert segment.contains(t)


@pytest.mark.parametrize("scale", (0, -1))
def test_segment_from_offsets_scale(scale):
    with pytest.raises(IntervalError, match="scale"):
        segment_from_offsets(1.0, OffsetPair(0.1, 0.1), scale)


@pytest.mark.parametrize("off", ((-0.1, 0.2), (0.5, 1.01)))
def test_offset_pair_range(off):
    with pytest.raises(IntervalError):
        OffsetPair(*off)


def test_clip():
    assert Interval(-4, 4).clip(0, 3) == Interval(0, 3)
    assert Interval(5, 6).clip(0, 3) == Interval(3, 3)


def _grid_tiou(a, b, low, high, points=10_000):
    grid = np.linspace(low, high, points)
    in_a = (grid >= a.start) & (grid <= a.end)
    in_b = (grid >= b.start) & (grid <= b.end)
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 1.0


def test_tiou_matches_grid_estimate(rng):
    worst = 0.0
    for _ in range(10_000):
        bounds = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=1)
        a, b = Interval(*bounds[0]), Interval(*bounds[1])
        low, high = min(a.start, b.start), max(a.end, b.end)
        if high <= low:
            continue
        worst = max(worst, abs(tiou(a, b) - _grid_tiou(a, b, low, high)))
    assert worst <= 2e-4 + 1e-12


def test_tiou_matrix_agrees_with_scalar(rng):
    starts = rng.uniform(0, 10, size=7)
    ends = starts + rng.uniform(0, 3, size=7)
    gs = rng.uniform(0, 10, size=3)
    ge = gs + rng.uniform(0.5, 3, size=3)
    raw = tiou_matrix(starts, ends, gs, ge, clamp=False)
    clamped = tiou_matrix(starts, ends, gs, ge)
    for p in range(7):
        for g in range(3):
            a, b = Interval(starts[p], ends[p]), Interval(gs[g], ge[g])
            assert raw[p, g] == pytest.approx(tiou_raw(a, b))
            assert clamped[p, g] == pytest.approx(tiou(a, b))


def test_segments_from_offsets_and_tensor_tiou():
    offsets = Tensor(np.array([[0.1, 0.2], [0.0, 0.5]]), requires_grad=True)
    segments = segments_from_offsets(offsets, np.array([2.0, 5.0]), 10.0)
    np.testing.assert_allclose(segments.data, [[1.0, 4.0], [5.0, 10.0]])
    overlap = tiou_raw_tensor(segments, [0.0], [4.0])
    np.testing.assert_allclose(overlap.data[:, 0], [3.0 / 4.0, -1.0 / 10.0])
    overlap.sum().backward()
    assert offsets.grad.shape == (2, 2)


def test_tensor_tiou_rejects_degenerate_references():
    segments = Tensor(np.array([[0.0, 1.0]]))
    with pytest.raises(IntervalError, match="positive length"):
        tiou_raw_tensor(segments, [1.0], [1.0])


def test_tiou_survives_affine_time_maps(rng):
    for _ in range(2000):
        bounds = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=1)
        bounds[:, 1] += 0.1
        a, b = Interval(*bounds[0]), Interval(*bounds[1])
        scale, shift = rng.uniform(0.1, 10), rng.uniform(-100, 100)
        moved_a = Interval(a.start * scale + shift, a.end * scale + shift)
        moved_b = Interval(b.start * scale + shift, b.end * scale + shift)
        assert tiou(moved_a, moved_b) == pytest.approx(tiou(a, b), abs=1e-9)
        assert tiou_raw(moved_a, moved_b) == pytest.approx(tiou_raw(a, b), abs=1e-9)


def test_anchored_segments_overlap_their_instance(rng):
    for _ in range(2000):
        start = rng.uniform(0, 10)
        gt = Interval(start, start + rng.uniform(0.1, 5))
        t = gt.start + gt.length * rng.uniform(0.01, 0.99)
        off = OffsetPair(*rng.uniform(0.01, 1, size=2))
        assert tiou_raw(segment_from_offsets(t, off, rng.uniform(0.5, 20)), gt) > 0
