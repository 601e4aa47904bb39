import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfrjlab.atmosphere import isa, speed_of_sound

import oracles


@pytest.mark.parametrize("h,T,p", [(0.0, 288.15, 101325.0), (5000.0, 255.65, 54019.0),
                                   (10000.0, 223.15, 26436.0)])
def test_isa_examples(h, T, p):
    s = isa(h)
    assert s.T == pytest.approx(T, abs=1e-9)
    # reference pressures use R = 287.053; this model uses R = 287.0
    assert s.p == pytest.approx(p, rel=3e-4)
    To, po, rho = oracles.isa_oracle(h)
    assert s.p == pytest.approx(po, rel=1e-10)
    assert s.rho == pytest.approx(rho, rel=1e-10)


@pytest.mark.parametrize("h", [-1.0, 11000.1, float("nan")])
def test_isa_domain(h):
    with pytest.raises(ValueError):
        isa(h)


def test_monotone_decreasing():
    hs = np.linspace(0, 11000, 1101)
    T = np.array([isa(h).T for h in hs])
    p = np.array([isa(h).p for h in hs])
    assert np.all(np.diff(T) < 0) and np.all(np.diff(p) < 0)


def test_brackets_sampled_pressure_range():
    assert isa(10000).p == pytest.approx(26e3, rel=0.03)
    assert isa(5000).p == pytest.approx(54e3, rel=0.03)


@given(st.floats(0.0, 11000.0))
def test_state_consistency(h):
    s = isa(h)
    assert s.T > 0 and s.p > 0 and s.rho > 0
    assert s.rho == pytest.approx(s.p / (287.0 * s.T), rel=1e-10)
    assert speed_of_sound(h) == pytest.approx((1.4 * 287.0 * s.T) ** 0.5, rel=1e-14)
