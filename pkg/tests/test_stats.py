import math

import numpy as np
import pytest
from scipy.stats import norm

import gmlab.stats as st
from gmlab.rng import stream
from gmlab.stats import energy_distance, spearman


def test_identical_samples():
    x = stream(0, "probe").standard_normal((300, 2))
    assert energy_distance(x, x) == 0.0


def test_gaussian_shift_matches_closed_form():
    mu = 1.0
    x = stream(0, "probe").standard_normal((4000, 1))
    y = mu + stream(1, "probe").standard_normal((4000, 1))
    s = math.sqrt(2.0)
    e_xy = s * math.sqrt(2 / math.pi) * math.exp(-mu ** 2 / (2 * s * s)) + mu * (1 - 2 * norm.cdf(-mu / s))
    exact = 2 * e_xy - 2 * (2 / math.sqrt(math.pi))
    assert energy_distance(x, y) == pytest.approx(exact, abs=0.02)


def test_chunking_invariant():
    x = stream(0, "probe").standard_normal((2500, 2))
    y = x[:700] + 0.3

    full = energy_distance(x, y)
    old = st.CHUNK
    try:
        st.CHUNK = 97
        assert energy_distance(x, y) == pytest.approx(full, rel=1e-12)
    finally:
        st.CHUNK = old


def test_spearman():
    assert spearman([1, 2, 3, 4], [1, 4, 9, 16]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
