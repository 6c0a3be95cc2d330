import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpml.cost_ledger import (
    COST_REPORT_COLUMNS,
    CostReceipt,
    charge_array,
    cost_report_rows,
    finite_level_gain,
    level_cost_ratio,
    predicted_gain,
    write_cost_report,
)
from mpml.fp_formats import DOUBLE, HALF, Q43, SINGLE


@pytest.mark.parametrize("n, fmt, bits", [(10, DOUBLE, 640), (10, HALF, 160), (10, "single", 320), (10, Q43, 80), (0, HALF, 0)])
def test_charge_array(n, fmt, bits):
    assert charge_array(n, fmt) == bits


def test_charge_array_negative():
    with pytest.raises(ValueError):
        charge_array(-1, HALF)


def test_receipt_charge():
    r = CostReceipt()
    r.charge(3, SINGLE)
    r.charge(2, HALF)
    assert r.mem_bits == 96 + 32
    assert r.metric("mem_bits") == 128
    with pytest.raises(ValueError):
        r.metric("seconds")


class TestPredictedGain:
    def test_coarse_quarter(self):
        # exact in binary64: 1/4 + 1/2 * 3/4
        assert predicted_gain(0.25, 2, 4, 2) == 0.625
        assert 1 / predicted_gain(0.25, 2, 4, 2) == 1.6

    def test_coarse_half(self):
        assert predicted_gain(0.5, 2, 4, 2) == 0.75

    def test_no_saving(self):
        assert predicted_gain(1.0, 2, 4, 2) == 1.0

    def test_rejects_slow_variance_decay(self):
        with pytest.raises(ValueError):
            predicted_gain(0.25, 2, 2, 2)

    def test_finite_tends_to_asymptotic(self):
        vals = [finite_level_gain(0.25, 2, 4, 2, L) for L in (1, 4, 40)]
        # fewer fine levels make the coarse saving weigh more
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] == pytest.approx(0.625, rel=1e-10)
        # one level pair by hand: (q + 1/2) / (1 + 1/2)
        assert vals[0] == pytest.approx((0.25 + 0.5) / 1.5)


class TestLevelCostRatio:
    def test_synthetic(self):
        C = [4.0**l for l in range(5)]
        N = [1024 * 16.0**-l for l in range(5)]
        assert np.array_equal(level_cost_ratio(C, N), np.full(4, 0.25))

    def test_single_level(self):
        assert level_cost_ratio([1.0], [10]).size == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            level_cost_ratio([1.0, 2.0], [1])


def test_cost_report_csv():
    rows = cost_report_rows("mpml", [CostReceipt(10, 640, 5, 2), CostReceipt(20, 1280, 9, 3)], [100, 25])
    text = write_cost_report(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(COST_REPORT_COLUMNS)
    assert lines[1] == "0,mpml,10,640,5,100"
    assert lines[2] == "1,mpml,20,1280,9,25"
    buf = io.StringIO()
    write_cost_report(rows, buf)
    assert buf.getvalue() == text


receipts = st.builds(
    CostReceipt,
    st.integers(0, 10**15),
    st.integers(0, 10**15),
    st.integers(0, 10**9),
    st.integers(0, 10**6),
)


@given(receipts, receipts, receipts)
def test_merge_associative_commutative(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a
    assert CostReceipt.merge([a, b, c]) == CostReceipt.merge([c, a, b])
    assert CostReceipt.merge([]) == CostReceipt()


@given(receipts, receipts)
def test_iadd_matches_add(a, b):
    want = a + b
    a += b
    assert a == want
    assert all(v >= 0 for v in a.as_dict().values())
