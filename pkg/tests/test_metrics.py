import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gammassl.datagen import IGNORE
from gammassl.errors import MetricError
from gammassl.metrics import (
    EvalRecord,
    aupr,
    evaluate_model,
    f_beta,
    max_f_beta_with_pac,
    pr_curve,
    report,
)

from oracles import brute_aupr, brute_max_f, enumerate_thresholds_np, threshold_points


def rec(score, accurate):
    return EvalRecord(np.asarray(score, float), np.asarray(accurate, bool))


THREE = rec([0.9, 0.8, 0.4], [1, 0, 1])


def test_three_pixel_curve():
    c = pr_curve(THREE)
    pts = list(zip(c.recall, c.precision))
    assert pts == pytest.approx([(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3)])
    oracle = [(r, p) for _, p, r, _ in threshold_points([0.9, 0.8, 0.4], [1, 0, 1])]
    assert pts == pytest.approx(oracle)
    assert np.all(np.diff(c.recall) >= 0)


def test_three_pixel_aupr():
    assert aupr(pr_curve(THREE)) == pytest.approx(0.5 + 0 + 0.5 * 2 / 3, abs=1e-9)
    assert brute_aupr([0.9, 0.8, 0.4], [1, 0, 1]) == pytest.approx(0.8333333333, abs=1e-9)


def test_three_pixel_max_f():
    # enumeration: F(P=1, R=0.5) = 0.8333 beats F(P=2/3, R=1) = 0.7143
    f, pac, thr = max_f_beta_with_pac(THREE)
    assert (f, pac, thr) == pytest.approx(brute_max_f([0.9, 0.8, 0.4], [1, 0, 1]))
    assert f == pytest.approx(1.25 * 0.5 / (0.25 + 0.5))
    assert pac == pytest.approx(1 / 3)
    assert thr == 0.8


def test_perfect_separation():
    r = rec([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    c = pr_curve(r)
    assert any(p == 1 and rc == 1 for rc, p in zip(c.recall, c.precision))
    assert aupr(c) == 1.0
    f, pac, _ = max_f_beta_with_pac(r)
    assert f == 1.0 and pac == 0.5


def test_all_accurate_precision_is_one():
    c = pr_curve(rec([0.3, 0.2, 0.9], [1, 1, 1]))
    assert np.all(c.precision == 1)


def test_single_positive_ranked_last():
    for m in (1, 2, 5, 17):
        score = np.linspace(1, 0, m)
        acc = np.zeros(m, bool)
        acc[-1] = True
        assert aupr(pr_curve(rec(score, acc))) == pytest.approx(1 / m, abs=1e-12)


def test_no_positives_is_error():
    with pytest.raises(MetricError):
        pr_curve(rec([0.1, 0.2], [0, 0]))


def test_f_beta_examples():
    for x in (0.1, 0.5, 1.0):
        for b in (0.5, 1, 2):
            assert f_beta(x, x, b) == pytest.approx(x)
    assert f_beta(2 / 3, 1, 0.5) == pytest.approx(0.7143, abs=1e-4)
    assert f_beta(1, 0, 0.5) == 0
    assert f_beta(0, 0, 0.5) == 0


def test_unique_maximum_threshold():
    # t=3: P=1,R=.5 ; t=2: P=1,R=1 ; t=1: P=2/3,R=1
    f, pac, thr = max_f_beta_with_pac(rec([4, 3, 2, 1], [1, 1, 0, 0]))
    assert (f, pac, thr) == (1.0, 0.5, 2.0)
    assert max_f_beta_with_pac(rec([4, 3, 2, 1], [1, 0, 1, 0])) == pytest.approx(
        brute_max_f([4, 3, 2, 1], [1, 0, 1, 0])
    )


def test_tie_takes_lower_threshold():
    # all accurate: F = 1 at every threshold, so the lowest (everything certain) wins
    f, pac, thr = max_f_beta_with_pac(rec([3.0, 2.0, 1.0, 0.5], [1, 1, 1, 1]))
    assert f == 1.0 and thr == -0.5 and pac == 1.0


def test_constant_scorer_aupr_is_accuracy_rate():
    acc = np.array([1, 0, 1, 1, 0, 1], bool)
    r = rec(np.full(6, 0.7), acc)
    c = pr_curve(r)
    assert np.allclose(c.precision, acc.mean())
    assert aupr(c) == pytest.approx(acc.mean())


def test_valid_mask_filters_pixels():
    r = EvalRecord(np.array([0.9, 0.1, 0.5]), np.array([1, 0, 0], bool), np.array([1, 1, 0], bool))
    assert aupr(pr_curve(r)) == 1.0


instances = st.integers(2, 1000).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 30), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )
)


@settings(max_examples=60, deadline=None)
@given(instances)
def test_matches_brute_force(inst):
    score, acc = inst
    if not any(acc):
        acc[0] = True
    score = np.array(score, float) / 7.0
    r = rec(score, acc)
    assert aupr(pr_curve(r)) == pytest.approx(brute_aupr(score, acc), abs=1e-9)
    assert max_f_beta_with_pac(r) == pytest.approx(brute_max_f(score, acc), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(instances)
def test_rank_invariance_and_bounds(inst):
    score, acc = inst
    if not any(acc):
        acc[0] = True
    score = np.array(score, float)
    a = report(rec(score, acc))
    b = report(rec(2 * score + 1, acc))
    c = report(rec(np.exp(score / 10), acc))
    for other in (b, c):
        assert other.aupr == a.aupr and other.max_f_half == a.max_f_half
        assert other.pac_at_max == a.pac_at_max
    acc_rate = np.mean(acc)
    for pac, thr in zip(a.pac_sweep, a.curve.threshold):
        assert pac <= min(acc_rate, np.mean(score > thr)) + 1e-12
    assert np.all(a.max_f_half >= a.f_sweep - 1e-12)
    assert 0 <= a.aupr <= 1


def test_evaluate_model_oracle_and_ood():
    labels = np.array([[[0, 1], [IGNORE, 2]]])
    pred = np.array([[[0, 2], [1, 2]]])
    accurate = (pred == labels) & (labels != IGNORE)

    def oracle(images):
        return accurate.astype(float), pred

    rep = evaluate_model(oracle, None, labels, "d")
    assert rep.aupr == 1.0
    assert rep.accuracy == 0.5  # the IGNORE pixel counts as inaccurate

    def constant(images):
        return np.full(labels.shape, 0.3), pred

    assert evaluate_model(constant, None, labels).aupr == pytest.approx(0.5)


def test_vectorised_oracle_agrees_with_scalar_oracle():
    gen = np.random.default_rng(17)
    for _ in range(30):
        n = int(gen.integers(2, 40))
        score = np.round(gen.random(n), 1)
        acc = gen.random(n) < 0.6
        acc[0] = True
        ap, f, pac, thr = enumerate_thresholds_np(score, acc)
        assert ap == pytest.approx(brute_aupr(score, acc), abs=1e-12)
        assert (f, pac, thr) == pytest.approx(brute_max_f(score, acc), abs=1e-12)
