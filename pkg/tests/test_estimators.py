import itertools
from fractions import Fraction

import numpy as np
import pytest

from survfuse.errors import DataError
from survfuse.estimators import StepFunction, aalen_johansen, kaplan_meier


def _km_oracle(times, flags, t):
    # product over every observed time <= t, risk sets recounted from scratch
    s = Fraction(1)
    for u in sorted(set(times)):
        if u > t:
            break
        at_risk = sum(1 for x in times if x >= u)
        d = sum(1 for x, f in zip(times, flags) if x == u and f)
        s *= 1 - Fraction(d, at_risk)
    return s


def _aj_oracle(times, events, cause, t):
    cif = Fraction(0)
    for u in sorted(set(times)):
        if u > t:
            break
        at_risk = sum(1 for x in times if x >= u)
        d_k = sum(1 for x, e in zip(times, events) if x == u and e == cause)
        s_before = Fraction(1)
        for v in sorted(set(times)):
            if v >= u:
                break
            n_v = sum(1 for x in times if x >= v)
            d_v = sum(1 for x, e in zip(times, events) if x == v and e > 0)
            s_before *= 1 - Fraction(d_v, n_v)
        cif += s_before * Fraction(d_k, at_risk)
    return cif


def _datasets(max_n=6, n_risks=2):
    # time patterns: all distinct, and a few with ties
    for n in range(1, max_n + 1):
        patterns = {tuple(range(1, n + 1)), tuple(sorted([1 + i // 2 for i in range(n)])), tuple([1] * n)}
        if n >= 3:
            patterns.add(tuple([1, 1] + list(range(2, n))))
        for times in patterns:
            for events in itertools.product(range(n_risks + 1), repeat=n):
                yield list(times), list(events)


def test_km_hand_all_events():
    km = kaplan_meier([1, 2, 3], [1, 1, 1])
    assert km(0.5) == 1.0
    assert km(1) == pytest.approx(2 / 3, abs=1e-15)
    assert km(1.99) == pytest.approx(2 / 3, abs=1e-15)
    assert km(2) == pytest.approx(1 / 3, abs=1e-15)
    assert km(3) == 0.0
    assert km(10) == 0.0


def test_km_hand_with_censoring():
    km = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert km(1) == pytest.approx(2 / 3, abs=1e-15)
    assert km(2.5) == pytest.approx(2 / 3, abs=1e-15)
    assert km(3) == 0.0


def test_km_without_events_is_one():
    km = kaplan_meier([1, 2, 3], [0, 0, 0])
    assert np.all(km([0, 1, 2, 3, 4]) == 1.0)


def test_censoring_km_without_censoring_is_one():
    g = kaplan_meier([1, 2, 3, 3.5], [1, 2, 1, 1], target="censoring")
    assert np.all(g.values == 1.0)


def test_km_left_limit():
    km = kaplan_meier([1, 2, 3], [1, 1, 1])
    assert km.left_limit(2) == pytest.approx(2 / 3, abs=1e-15)
    assert km.left_limit(1) == 1.0


def test_aj_hand_case():
    cif1, cif2 = aalen_johansen([1, 2], [1, 2])
    assert cif1(0.5) == 0.0
    assert cif1(1) == 0.5
    assert cif2(1.5) == 0.0
    assert cif2(2) == 0.5
    assert cif1(2) + cif2(2) == 1.0


def test_aj_all_censored():
    cifs = aalen_johansen([1, 2, 3], [0, 0, 0], n_risks=2)
    assert all(np.all(c.values == 0.0) for c in cifs)


def test_aj_single_risk_is_one_minus_km_exactly():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        times = np.round(rng.exponential(size=n), 1) + 0.1
        events = rng.integers(0, 2, size=n)
        (cif,) = aalen_johansen(times, events, n_risks=1)
        km = kaplan_meier(times, events)
        assert np.array_equal(cif.values, 1.0 - km.values)


def test_aj_sums_to_one_minus_km():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        K = int(rng.integers(2, 5))
        times = np.round(rng.exponential(size=n), 1) + 0.1
        events = rng.integers(0, K + 1, size=n)
        cifs = aalen_johansen(times, events, n_risks=K)
        km = kaplan_meier(times, events)
        total = sum(c.values for c in cifs)
        assert np.abs(total - (1.0 - km.values)).max() <= 1e-12


def test_estimator_outputs_are_monotone():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        times = rng.integers(1, 8, size=n).astype(float)
        events = rng.integers(0, 3, size=n)
        km = kaplan_meier(times, events)
        assert np.all(np.diff(km.values) <= 0) and km.values.min() >= 0 and km.values.max() <= 1
        for c in aalen_johansen(times, events, n_risks=2):
            assert np.all(np.diff(c.values) >= -1e-15) and c.values.min() >= 0 and c.values.max() <= 1


def test_km_matches_risk_set_oracle_exhaustively():
    checked = 0
    for times, events in _datasets(n_risks=1):
        km = kaplan_meier(times, events)
        g = kaplan_meier(times, events, target="censoring")
        for t in sorted(set(times)) + [0.5, max(times) + 1]:
            assert km(t) == pytest.approx(float(_km_oracle(times, [e > 0 for e in events], t)), abs=1e-14)
            assert g(t) == pytest.approx(float(_km_oracle(times, [e == 0 for e in events], t)), abs=1e-14)
            checked += 1
    assert checked > 100


def test_aj_matches_risk_set_oracle_exhaustively():
    checked = 0
    for times, events in _datasets(n_risks=2):
        cifs = aalen_johansen(times, events, n_risks=2)
        for t in sorted(set(times)):
            for k in (1, 2):
                assert cifs[k - 1](t) == pytest.approx(float(_aj_oracle(times, events, k, t)), abs=1e-14)
                checked += 1
    assert checked > 1000


def test_step_function_csv_round_trip():
    km = kaplan_meier([1.5, 2, 3.25], [1, 0, 1])
    text = km.to_csv()
    assert text.splitlines()[0] == "time,value"
    assert text.splitlines()[1] == "0.0,1.0"
    back = StepFunction.from_csv(text)
    for t in (0, 1, 1.5, 2.2, 3.25, 9):
        assert back(t) == km(t)


def test_estimator_validation():
    with pytest.raises(DataError):
        kaplan_meier([], [])
    with pytest.raises(DataError):
        kaplan_meier([1, -1], [1, 1])
    with pytest.raises(DataError):
        kaplan_meier([1, 2], [1])
    with pytest.raises(DataError):
        aalen_johansen([1, 2], [1, 3], n_risks=2)
    with pytest.raises(ValueError):
        kaplan_meier([1], [1], target="both")
