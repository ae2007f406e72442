import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathito.models import BrownianMotion, CompoundPoisson, simulate_batch
from pathito.pathspace import (
    GridMismatchError,
    GridPath,
    StoppedPath,
    TimeGrid,
    coarsen,
    concat,
    d_infty,
    horizontal_extend,
    read_csv,
    stop,
    stop_pre,
    vertical_bump,
    write_csv,
)

G5 = TimeGrid(1.0, 4)  # five grid points


def jump_path():
    # +1 jump at index 3
    return GridPath(G5, [0.0, 0.1, 0.2, 1.2, 1.3], [0, 0, 0, 1, 0])


def col(sp):
    return sp.values[..., 0]


def test_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.times[0] == 0.0 and g.times[-1] == 2.0
    assert np.all(np.diff(g.times) > 0)
    assert g.index_of(0.75) == 3
    with pytest.raises(ValueError):
        g.index_of(0.3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 4)


def test_left_limits_rule():
    p = jump_path()
    np.testing.assert_array_equal(p.left_limits[:, 0], [0.0, 0.1, 0.2, 0.2, 1.3])
    np.testing.assert_allclose(p.jumps()[:, 0], [0, 0, 0, 1.0, 0])


def test_stop_constant_is_fixed_point():
    p = GridPath(G5, np.full(5, 2.5))
    for k in range(5):
        np.testing.assert_array_equal(col(stop(p, k)), np.full(5, 2.5))


def test_stop_before_jump_hand_oracle():
    sp = stop(jump_path(), 2)
    np.testing.assert_array_equal(col(sp), [0.0, 0.1, 0.2, 0.2, 0.2])
    assert not sp.jump_flags.any()


def test_stop_idempotent_and_later_index():
    p = jump_path()
    for k in range(5):
        sp = stop(p, k)
        assert stop(sp, k) == sp
        for j in range(k, 5):
            assert stop(sp, j) is sp


def test_stop_out_of_range():
    with pytest.raises(IndexError):
        stop(jump_path(), 5)
    with pytest.raises(IndexError):
        stop(jump_path(), -1)


def test_stop_pre_hand_oracle():
    p = jump_path()
    sp = stop_pre(p, 3)
    np.testing.assert_array_equal(col(sp), [0.0, 0.1, 0.2, 0.2, 0.2])
    assert sp.frozen_value[0] == pytest.approx(p.values[3, 0] - 1.0, abs=1e-15)
    # no jump at index 2 or 4: same as stop
    assert stop_pre(p, 2) == stop(p, 2)
    assert stop_pre(p, 4) == stop(p, 4)
    with pytest.raises(IndexError):
        stop_pre(p, 0)


def test_stop_pre_replays_compound_poisson_ledger():
    g = TimeGrid(1.0, 50)
    cp = CompoundPoisson(0.0, 8.0, ((0.5, 0.5), (-0.3, 0.5)))
    paths = simulate_batch(cp, g, 40, seed=3)
    jumps = paths.jumps()[..., 0]
    for k in range(1, 51):
        pre = stop_pre(paths, k).frozen_value[..., 0]
        np.testing.assert_allclose(pre, paths.values[:, k, 0] - jumps[:, k], rtol=0, atol=1e-15)


def test_vertical_bump_examples():
    p = jump_path()
    sp = stop(p, 2)
    assert vertical_bump(sp, 0.0) == sp
    c = GridPath(G5, np.full(5, 1.5))
    np.testing.assert_array_equal(col(vertical_bump(stop(c, 0), 0.25)), np.full(5, 1.75))
    b = vertical_bump(sp, 0.5)
    np.testing.assert_array_equal(col(b), [0.0, 0.1, 0.7, 0.7, 0.7])
    assert vertical_bump(b, -0.5) == sp
    with pytest.raises(GridMismatchError):
        vertical_bump(sp, [1.0, 2.0])


def test_horizontal_extend_examples():
    p = jump_path()
    sp = stop(p, 1)
    assert horizontal_extend(sp, 0) == sp
    e = horizontal_extend(sp, 3)
    assert e.stop_index == 4
    np.testing.assert_array_equal(col(e), [0.0, 0.1, 0.1, 0.1, 0.1])
    assert not e.jump_flags.any()
    c = GridPath(G5, np.full(5, -1.0))
    ce = horizontal_extend(stop(c, 1), 2)
    np.testing.assert_array_equal(col(ce), np.full(5, -1.0))
    assert ce.stop_index == 3
    with pytest.raises(IndexError):
        horizontal_extend(sp, 4)
    with pytest.raises(ValueError):
        horizontal_extend(sp, -1)


def test_concat_examples():
    a = GridPath(G5, [1.0, 2.0, 4.0, 3.0, 5.0], [0, 0, 1, 0, 0])
    b = GridPath(G5, [0.0, -1.0, 0.5, 0.7, 2.0], [0, 0, 0, 1, 0])
    k = 2
    sp = stop(a, k)
    out = concat(sp, b)
    # direct per-index evaluation of a 1_[0,t) + (a_t + b - b_t) 1_[t,T]
    want = [a.values[i, 0] if i < k else a.values[k, 0] + b.values[i, 0] - b.values[k, 0] for i in range(5)]
    np.testing.assert_array_equal(out.values[:, 0], want)
    np.testing.assert_array_equal(out.jump_flags, [0, 0, 1, 1, 0])
    const = GridPath(G5, np.full(5, 9.0))
    np.testing.assert_array_equal(concat(sp, const).values, sp.values)
    for j in range(5):
        assert concat(stop(a, j), a).equals(a)


def test_concat_grid_mismatch():
    a = jump_path()
    with pytest.raises(GridMismatchError):
        concat(stop(a, 1), GridPath(TimeGrid(1.0, 5), np.zeros(6)))


def test_d_infty_examples():
    p = GridPath(G5, [0.0, 1.0, 1.0, 3.0, 3.0])
    a, b = stop(p, 1), stop(p, 2)
    assert d_infty(a, a) == 0.0
    assert d_infty(a, b) == pytest.approx(G5.dt)
    c1, c2 = GridPath(G5, np.full(5, 1.0)), GridPath(G5, np.full(5, 3.5))
    assert d_infty(stop(c1, 2), stop(c2, 2)) == 2.5
    with pytest.raises(GridMismatchError):
        d_infty(a, stop(GridPath(TimeGrid(1.0, 3), np.zeros(4)), 1))


def test_equality_under_distinct_bases():
    # same frozen values from different futures are the same stopped path
    p1 = GridPath(G5, [0.0, 1.0, 2.0, 3.0, 4.0])
    p2 = GridPath(G5, [0.0, 1.0, 2.0, -7.0, 8.0])
    assert stop(p1, 2) == stop(p2, 2)
    assert d_infty(stop(p1, 2), stop(p2, 2)) == 0.0


def test_csv_round_trip(tmp_path):
    g = TimeGrid(1.0, 30)
    p = simulate_batch(CompoundPoisson(0.3, 5.0, ((0.123456789012345, 1.0),)), g, 1, seed=9)[0]
    f = tmp_path / "p.csv"
    write_csv(p, f)
    assert f.read_text().splitlines()[0] == "t,x_1,jump"
    q = read_csv(f)
    assert q.equals(p)


def test_coarsen_keeps_jump_flags():
    g = TimeGrid(1.0, 8)
    p = GridPath(g, np.arange(9.0), [0, 0, 0, 1, 0, 0, 0, 0, 0])
    c = coarsen(p, 2)
    np.testing.assert_array_equal(c.values[:, 0], [0, 2, 4, 6, 8])
    np.testing.assert_array_equal(c.jump_flags, [0, 0, 1, 0, 0])


# ---------------------------------------------------------------------------
# properties

floats = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def paths(draw, n=6):
    vals = draw(st.lists(floats, min_size=n + 1, max_size=n + 1))
    flags = [False] + draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return GridPath(TimeGrid(1.0, n), vals, flags)


@settings(max_examples=60, deadline=None)
@given(paths(), st.integers(0, 6))
def test_canonical_tail(p, k):
    sp = stop(p, k)
    assert np.all(sp.values[k:] == sp.values[k])


@settings(max_examples=60, deadline=None)
@given(paths(), st.integers(0, 6), floats, floats)
def test_group_action(p, k, x, y):
    sp = stop(p, k)
    a = vertical_bump(vertical_bump(sp, x), y)
    b = vertical_bump(sp, x + y)
    # exact when the offsets add exactly, which they do for a fresh path
    assert np.array_equal(a.offset, b.offset)
    assert a == b


@settings(max_examples=60, deadline=None)
@given(paths(), st.integers(0, 6))
def test_self_concat_restores(p, k):
    assert concat(stop(p, k), p).equals(p)


@settings(max_examples=60, deadline=None)
@given(paths(), paths(), paths(), st.integers(0, 6), st.integers(0, 6), st.integers(0, 6))
def test_metric_axioms(p, q, r, i, j, k):
    a, b, c = stop(p, i), stop(q, j), stop(r, k)
    dab, dba = d_infty(a, b), d_infty(b, a)
    assert dab >= 0
    assert dab == dba
    assert (dab == 0) == (a == b)
    assert d_infty(a, c) <= dab + d_infty(b, c) + 1e-12


def test_self_concat_simulated_paths():
    g = TimeGrid(1.0, 40)
    for model in (BrownianMotion(0.5, 0.1, 0.3), CompoundPoisson(0.0, 6.0, ((0.2, 0.5), (-0.4, 0.5)))):
        ps = simulate_batch(model, g, 16, seed=1)
        for k in range(41):
            assert concat(stop(ps, k), ps).equals(ps)


def test_batched_stop_matches_single():
    g = TimeGrid(1.0, 10)
    ps = simulate_batch(BrownianMotion(0.0, 0.0, 1.0), g, 5, seed=2)
    sp = stop(ps, 4)
    for i in range(5):
        assert sp[i] == stop(ps[i], 4)
    assert isinstance(sp[0], StoppedPath)


def test_metric_separates_tiny_gaps():
    g = TimeGrid(1.0, 2)
    a = stop(GridPath(g, [0.0, 0.0, 0.0]), 2)
    b = stop(GridPath(g, [0.0, 5e-324, 0.0]), 2)
    assert d_infty(a, b) == 5e-324
    two = stop(GridPath(g, np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]])), 2)
    zero = stop(GridPath(g, np.zeros((3, 2))), 2)
    assert d_infty(two, zero) == 5.0
