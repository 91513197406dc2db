import math

from hypothesis import assume, given
from hypothesis import strategies as st

from pwcbf.interval import Interval, icos, isin

finite = st.floats(-50, 50, allow_nan=False)


def interval():
    return st.tuples(finite, finite).map(lambda p: Interval(min(p), max(p)))


def point_in(iv, t):
    return iv.lo + t * (iv.hi - iv.lo)


@given(interval(), interval(), st.floats(0, 1), st.floats(0, 1))
def test_arithmetic_encloses_point_results(a, b, s, t):
    x, y = point_in(a, s), point_in(b, t)
    assert (a + b).contains(x + y)
    assert (a - b).contains(x - y)
    assert (a * b).contains(x * y)
    assert (-a).contains(-x)


@given(interval(), st.floats(-5, 5), st.floats(0, 1))
def test_scale_encloses(a, c, t):
    assert a.scale(c).contains(c * point_in(a, t))


@given(interval(), st.floats(0, 1))
def test_trig_enclosures(a, t):
    x = point_in(a, t)
    assert isin(a).contains(math.sin(x))
    assert icos(a).contains(math.cos(x))


def test_trig_extrema_inside():
    assert isin(Interval(0.0, math.pi)).hi == 1.0
    assert icos(Interval(3.0, 3.5)).lo == -1.0
    assert isin(Interval(0, 7)) == Interval(-1.0, 1.0)


def test_product_rule():
    r = Interval(-1, 1) * Interval(2, 3)
    assert r.lo <= -3 <= r.lo + 1e-15 and r.hi - 1e-15 <= 3 <= r.hi


@given(interval(), interval())
def test_intersection_inside_both_when_overlapping(a, b):
    assume(max(a.lo, b.lo) <= min(a.hi, b.hi))
    c = a.intersect(b)
    assert a.lo <= c.lo and c.hi <= a.hi and b.lo <= c.lo and c.hi <= b.hi
