import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridfrag.errors import ContractError
from gridfrag.fragility import FragilityParams, failure_probability, linear_predictor, system_failure_rate

WIND = FragilityParams(("wind_speed",), [65.0], [0.2])


def test_midpoint():
    p = FragilityParams(("a", "b"), [3.0, 7.0], [0.5, 2.0])
    assert failure_probability(p, [3.0, 7.0]) == 0.5


def test_inverted_quartile():
    assert failure_probability(WIND, 65 + 5 * math.log(3)) == pytest.approx(0.75, abs=1e-12)


def test_calm_air():
    assert failure_probability(WIND, 0.0) == pytest.approx(2.2603e-6, rel=1e-4)
    assert failure_probability(WIND, 0.0) == pytest.approx(1 / (1 + math.exp(13)), rel=1e-12)


def test_system_rate():
    assert system_failure_rate(WIND, 60.0, 10_000) == pytest.approx(2689.414, rel=1e-6)
    assert system_failure_rate(WIND, 65.0, 1000) == 500.0
    assert system_failure_rate(WIND, 58.0, 1) == failure_probability(WIND, 58.0)


def test_rows_give_array():
    g = failure_probability(WIND, np.array([[0.0], [65.0], [1e4]]))
    assert g.shape == (3,)
    assert g[1] == 0.5 and g[2] == 1.0 and g[0] > 0


def test_dimension_mismatch():
    two = FragilityParams(("a", "b"), [1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ContractError):
        failure_probability(two, [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        failure_probability(WIND, np.ones((4, 2)))


def test_invalid_params():
    with pytest.raises(ContractError):
        FragilityParams(("w",), [1.0], [0.0])
    with pytest.raises(ContractError):
        FragilityParams(("w",), [np.nan], [0.2])


def test_working_round_trip():
    p = FragilityParams(("a", "b"), [60.0, 2.0], [0.2, 1.5])
    assert FragilityParams.from_working(p.features, p.working()) == p
    assert FragilityParams.from_dict(p.to_dict()) == p


def test_saturation_is_finite():
    steep = FragilityParams(("w",), [10.0], [1e3])
    assert failure_probability(steep, 0.0) >= 0.0
    assert failure_probability(steep, 20.0) == 1.0


@given(
    alpha=st.floats(1, 200), beta=st.floats(1e-3, 5),
    x1=st.floats(0, 300), x2=st.floats(0, 300),
)
def test_monotone_and_bounded(alpha, beta, x1, x2):
    p = FragilityParams(("w",), [alpha], [beta])
    g1, g2 = failure_probability(p, x1), failure_probability(p, x2)
    assert 0.0 <= g1 <= 1.0
    if x1 <= x2:
        assert g1 <= g2
    eta = linear_predictor(p, np.array([[x1]]))[0]
    assert eta == pytest.approx(beta * (x1 - alpha))


@given(alpha=st.floats(1, 200), beta=st.floats(1e-3, 5), d=st.floats(0, 100))
def test_symmetry(alpha, beta, d):
    p = FragilityParams(("w",), [alpha], [beta])
    total = failure_probability(p, alpha + d) + failure_probability(p, max(alpha - d, 0.0))
    if alpha - d >= 0:
        assert total == pytest.approx(1.0, abs=1e-12)
