import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpml.fp_formats import (
    DOUBLE,
    FORMATS,
    HALF,
    Q43,
    SINGLE,
    FormatOverflowError,
    fp_op,
    get_format,
    representable_values,
    round_array,
    round_to,
)


def q43_grid():
    # built from the format definition, independent of the module:
    # 4 exponent bits (bias 7), 3 fraction bits, subnormals below 2**-6
    vals = {f / 8 * 2.0**-6 for f in range(8)}
    for e in range(-6, 8):
        for f in range(8):
            vals.add((1 + f / 8) * 2.0**e)
    return np.array(sorted(vals))


def nearest_even(x, grid):
    """Brute-force round-to-nearest, ties to the value with even last bit."""
    i = np.searchsorted(grid, abs(x))
    if i == 0:
        return math.copysign(grid[0], x)
    if i == len(grid):
        return math.copysign(grid[-1], x)
    lo, hi = grid[i - 1], grid[i]
    d_lo, d_hi = abs(x) - lo, hi - abs(x)
    if d_lo < d_hi:
        r = lo
    elif d_hi < d_lo:
        r = hi
    else:
        # the even neighbour has an even index on a uniform binade
        r = lo if (i - 1) % 2 == 0 else hi
    return math.copysign(r, x)


class TestParameters:
    def test_q43_exact(self):
        assert Q43.exp_bits == 4
        assert Q43.sig_bits == 3
        assert Q43.unit_roundoff == 2.0**-4
        assert Q43.bits == 8
        assert Q43.max_abs == 240.0
        assert Q43.min_normal == 2.0**-6
        assert Q43.min_subnormal == 2.0**-9

    @pytest.mark.parametrize(
        "fmt, u, bits, xmax",
        [
            (HALF, 2.0**-11, 16, 65504.0),
            (SINGLE, 2.0**-24, 32, float(np.finfo(np.float32).max)),
            (DOUBLE, 2.0**-53, 64, float(np.finfo(np.float64).max)),
        ],
    )
    def test_ieee_formats(self, fmt, u, bits, xmax):
        assert fmt.unit_roundoff == u
        assert fmt.bits == bits
        assert fmt.max_abs == xmax

    def test_ordering_by_unit_roundoff(self):
        assert DOUBLE < SINGLE < HALF < Q43
        assert DOUBLE <= DOUBLE

    def test_lookup(self):
        assert get_format("h") is HALF
        assert get_format(" Single ") is SINGLE
        with pytest.raises(ValueError):
            get_format("bfloat16")


class TestRounding:
    def test_q43_grid_matches_enumeration(self):
        assert np.array_equal(representable_values(Q43), q43_grid())

    def test_q43_brute_force(self, rng):
        grid = q43_grid()
        xs = np.concatenate([
            rng.uniform(-240, 240, 3000),
            rng.uniform(-0.05, 0.05, 2000),
            # exact midpoints exercise the tie rule
            (grid[1:] + grid[:-1]) / 2,
            -(grid[1:] + grid[:-1]) / 2,
        ])
        got = round_array(xs, *Q43.kernel_args())
        want = np.array([nearest_even(x, grid) for x in xs])
        assert np.array_equal(got, want)

    @pytest.mark.parametrize("fmt, dtype", [(HALF, np.float16), (SINGLE, np.float32)])
    def test_matches_numpy_cast(self, fmt, dtype, rng):
        info = np.finfo(dtype)
        mags = np.exp(rng.uniform(np.log(float(info.smallest_subnormal)), np.log(float(info.max) * 0.999), 200_000))
        xs = mags * rng.choice([-1.0, 1.0], mags.size)
        with np.errstate(over="ignore"):
            want = xs.astype(dtype).astype(np.float64)
        assert np.array_equal(round_array(xs, *fmt.kernel_args()), want)

    def test_examples(self):
        assert round_to(1.0 + 2.0**-5, Q43) == 1.0  # tie, rounds to even
        assert round_to(1.0 + 3 * 2.0**-4, Q43) == 1.25  # tie, 1.125 is odd
        assert round_to(0.1, HALF) == float(np.float16(0.1))
        assert round_to(2.0**-9, Q43) == 2.0**-9
        assert round_to(2.0**-11, Q43) == 0.0  # below half the smallest subnormal
        assert round_to(247.9, Q43) == 240.0

    @pytest.mark.parametrize("x", [248.0, 1e6, -300.0])
    def test_q43_overflow(self, x):
        with pytest.raises(FormatOverflowError):
            round_to(x, Q43)

    def test_half_overflow(self):
        assert round_to(65519.0, HALF) == 65504.0
        with pytest.raises(FormatOverflowError):
            round_to(65520.0, HALF)

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            round_to(math.inf, HALF)
        with pytest.raises(ValueError):
            round_to(np.array([1.0, math.nan]), HALF)

    def test_fp_op(self):
        # 1 + 1/16 is a tie between 1 and 1.125; ties-to-even gives 1
        assert fp_op(1.0, 2.0**-4, "add", Q43) == 1.0
        assert fp_op(1.0, 2.0**-3, "add", Q43) == 1.125
        assert fp_op(3.0, 3.0, "mul", Q43) == 9.0
        assert fp_op(1.0, 3.0, "div", HALF) == float(np.float16(1 / 3))
        with pytest.raises(ZeroDivisionError):
            fp_op(1.0, 0.0, "div", SINGLE)
        with pytest.raises(FormatOverflowError):
            fp_op(200.0, 100.0, "add", Q43)
        with pytest.raises(ValueError):
            fp_op(1.0, 1.0, "pow", Q43)


finite = st.floats(min_value=-1e30, max_value=1e30, allow_nan=False, allow_infinity=False)


@given(st.sampled_from(["q43", "half", "single"]), finite)
def test_idempotent_and_symmetric(name, x):
    fmt = FORMATS[name]
    try:
        r = round_to(x, fmt)
    except FormatOverflowError:
        assert abs(x) > fmt.max_abs
        return
    assert round_to(r, fmt) == r
    assert round_to(-x, fmt) == -r


@given(st.sampled_from(["q43", "half", "single"]), finite, finite)
def test_monotone(name, x, y):
    fmt = FORMATS[name]
    lo, hi = min(x, y), max(x, y)
    if max(abs(lo), abs(hi)) > fmt.max_abs:
        return
    assert round_to(lo, fmt) <= round_to(hi, fmt)


@given(st.sampled_from(["q43", "half", "single"]), st.floats(min_value=2.0**-6, max_value=200.0))
def test_relative_error_bound(name, x):
    fmt = FORMATS[name]
    assert abs(round_to(x, fmt) - x) <= fmt.unit_roundoff * abs(x)


@given(
    st.sampled_from(["q43", "half", "single"]),
    st.sampled_from(["add", "mul"]),
    st.floats(min_value=-8, max_value=8, allow_nan=False),
    st.floats(min_value=-8, max_value=8, allow_nan=False),
)
def test_commutative(name, op, a, b):
    assert fp_op(a, b, op, name) == fp_op(b, a, op, name)
