import numpy as np
import pytest

from predmark.errors import DataValidationError
from predmark.survival import (
    kaplan_meier,
    km_event_prob_at,
    km_median,
    km_survival_at,
    nelson_aalen,
)

# five subjects: events at 1, 3, 4; censored at 2 and 5
TIME = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
EVENT = np.array([1.0, 0.0, 1.0, 1.0, 0.0])


def test_kaplan_meier_hand_example():
    t, s = kaplan_meier(TIME, EVENT)
    np.testing.assert_allclose(t, [1, 3, 4])
    # S(1)=4/5, S(3)=4/5*2/3, S(4)=4/5*2/3*1/2
    np.testing.assert_allclose(s, [0.8, 0.8 * 2 / 3, 0.8 * 2 / 3 * 0.5])


def test_km_survival_at_carries_forward():
    assert km_survival_at(TIME, EVENT, 0.5) == 1.0
    assert km_survival_at(TIME, EVENT, 2.5) == pytest.approx(0.8)
    assert km_survival_at(TIME, EVENT, 100.0) == pytest.approx(0.8 * 2 / 3 * 0.5)


def test_km_event_prob_complements_survival():
    for t0 in (0.5, 1.0, 3.5, 4.0):
        assert km_event_prob_at(TIME, EVENT, t0) == pytest.approx(
            1.0 - km_survival_at(TIME, EVENT, t0)
        )


def test_km_median_first_time_below_half():
    # S(3) = 0.533 > 0.5, S(4) = 0.267 <= 0.5
    assert km_median(TIME, EVENT) == 4.0


def test_km_median_not_reached():
    with pytest.raises(DataValidationError, match="median"):
        km_median(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 1.0]))


def test_nelson_aalen_hand_example():
    t, h = nelson_aalen(TIME, EVENT)
    np.testing.assert_allclose(t, [1, 3, 4])
    np.testing.assert_allclose(h, [1 / 5, 1 / 5 + 1 / 3, 1 / 5 + 1 / 3 + 1 / 2])


def test_tied_event_times():
    time = np.array([2.0, 2.0, 2.0, 5.0])
    event = np.array([1.0, 1.0, 0.0, 1.0])
    t, s = kaplan_meier(time, event)
    np.testing.assert_allclose(t, [2, 5])
    np.testing.assert_allclose(s, [0.5, 0.0])
    _, h = nelson_aalen(time, event)
    np.testing.assert_allclose(h, [2 / 4, 2 / 4 + 1.0])
