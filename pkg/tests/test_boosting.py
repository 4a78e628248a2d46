import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset, step_spec
from uplift_boost.boosting import (
    ADABOOST,
    BAGGING,
    BALANCED,
    BALANCED_FORGETTING,
    BalanceError,
    BoostConfig,
    BoostingEnsemble,
    EmptyEnsembleError,
    Errors,
    IterationRecord,
    UsageError,
    WeightState,
    adaboost_cvt_oracle,
    balance_diagnostic,
    balance_partner,
    balanced_bound_factor,
    coefficients_adaboost,
    coefficients_balanced,
    coefficients_balanced_forgetting,
    compute_errors,
    error_bound,
    errors_from_mistakes,
    fit_bagging,
    fit_boosting,
    forgetting_bound_factor,
    init_weights,
    needs_restart,
    restart_weights,
    training_error,
    update_weights,
)
from uplift_boost.dataset import generate_synthetic
from uplift_boost.tree import Leaf, UpliftTree, fit_tree


class Const:
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(len(X), self.value, dtype=np.int8)


def test_init_weights():
    s = init_weights(ADABOOST, 3, 2)
    assert s.w_t.tolist() == [1, 1, 1] and s.w_c.tolist() == [1, 1]
    s = init_weights(BALANCED, 4, 2)
    assert s.w_t.tolist() == [0.25] * 4 and s.w_c.tolist() == [0.5, 0.5]
    assert s.total_t == s.total_c
    a = init_weights(ADABOOST, 5, 5).normalized()
    b = init_weights(BALANCED_FORGETTING, 5, 5).normalized()
    np.testing.assert_allclose(a.w_t, b.w_t, rtol=1e-15)
    with pytest.raises(UsageError):
        init_weights(ADABOOST, 0, 3)


def test_compute_errors_examples():
    d = make_dataset([[0], [1]], [0, 1], [[0], [1]], [1, 0])
    state = init_weights(ADABOOST, 2, 2)
    tree_perfect = fit_tree(d)
    assert tuple(compute_errors(tree_perfect, state, d)) == (0.0, 0.0, 0.0)
    bad = make_dataset([[0], [1]], [0, 0], [[0], [1]], [1, 1])
    assert tuple(compute_errors(Const(1), state, bad)) == (1.0, 1.0, 1.0)
    e = errors_from_mistakes(np.array([True, False]), np.array([False]),
                             WeightState(np.array([0.75, 0.25]), np.array([1.0])))
    assert e.eps_t == 0.75


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12))
def test_pooled_error_identity(seed, n_t, n_c):
    # with balanced weights: 2*eps = P_T(h=1,y=0) + P_T(h=0,y=1) + P_C(h=y)
    rng = np.random.default_rng(seed)
    h_t, y_t = rng.integers(0, 2, n_t), rng.integers(0, 2, n_t)
    h_c, y_c = rng.integers(0, 2, n_c), rng.integers(0, 2, n_c)
    w_t, w_c = rng.exponential(size=n_t), rng.exponential(size=n_c)
    state = WeightState(0.5 * w_t / w_t.sum(), 0.5 * w_c / w_c.sum())
    e = errors_from_mistakes(h_t != y_t, h_c == y_c, state)
    pt = lambda m: state.w_t[m].sum() / state.total_t
    pc = lambda m: state.w_c[m].sum() / state.total_c
    rhs = pt((h_t == 1) & (y_t == 0)) + pt((h_t == 0) & (y_t == 1)) + pc(h_c == y_c)
    assert 2 * e.eps == pytest.approx(rhs, abs=1e-12)


def test_adaboost_coefficients():
    c = coefficients_adaboost(0.25, 0.25, 0.5, 0.5)
    assert c.beta == c.beta_t == c.beta_c == pytest.approx(1 / 3) and not c.restart
    c = coefficients_adaboost(0.2, 0.3, 0.6, 0.4)
    assert c.beta == pytest.approx(0.24 / 0.76) and round(c.beta, 5) == 0.31579
    c = coefficients_adaboost(0.5, 0.5, 0.5, 0.5)
    assert c.beta == 1.0 and c.restart


def test_balanced_coefficients():
    c = coefficients_balanced(0.2, 0.1)
    assert (c.beta_c, c.beta_t, c.beta) == pytest.approx((1 / 3, 0.25, 0.25))
    assert balanced_bound_factor(0.2, 0.1) == pytest.approx(0.8)
    c = coefficients_balanced(0.1, 0.2)
    assert (c.beta_c, c.beta_t, c.beta) == pytest.approx((0.25, 1 / 3, 0.25))
    assert balanced_bound_factor(0.1, 0.2) == pytest.approx(0.8)
    c = coefficients_balanced(0.4, 0.6)
    assert (c.beta_t, c.beta_c) == (1.0, 1.0) and c.restart
    assert balanced_bound_factor(0.4, 0.6) == 1.0
    assert coefficients_balanced(0.0, 0.2).restart
    with pytest.raises(BalanceError):
        coefficients_balanced(0.2, 0.1, p_t=0.6)


def test_balanced_forgetting_coefficients():
    c = coefficients_balanced_forgetting(0.2, 0.1)
    assert (c.beta_t, c.beta_c, c.beta) == pytest.approx((0.125, 0.2 / 0.9, 0.125))
    c = coefficients_balanced_forgetting(0.25, 0.25)
    assert c.beta_t == c.beta_c == pytest.approx(1 / 3)
    factors = []
    for eps_c in (1e-3, 1e-6, 1e-9):
        c = coefficients_balanced_forgetting(0.25, eps_c)
        assert c.beta_t == pytest.approx(eps_c / 0.75)
        factors.append(forgetting_bound_factor(0.25, eps_c))
        assert factors[-1] == pytest.approx(math.sqrt(0.75 / eps_c) * (0.25 + eps_c), rel=1e-9)
    assert factors[0] < factors[1] < factors[2]
    assert coefficients_balanced_forgetting(1.0, 0.3).restart


def test_update_weights():
    s = WeightState(np.array([0.25, 0.25]), np.array([0.25, 0.25]))
    n = update_weights(s, np.array([False, True]), np.array([True, False]), 0.5, 0.5)
    # correct treatment record halves, wrong control record unchanged, then normalized
    raw = np.array([0.125, 0.25, 0.25, 0.125])
    np.testing.assert_allclose(np.concatenate([n.w_t, n.w_c]), raw / raw.sum())
    assert n.total_t + n.total_c == pytest.approx(1.0, abs=1e-15)


def test_restart_weights():
    a = restart_weights(60_000, 40_000, np.random.default_rng(1))
    b = restart_weights(60_000, 40_000, np.random.default_rng(1))
    np.testing.assert_array_equal(a.w_t, b.w_t)
    assert (a.w_t > 0).all() and (a.w_c > 0).all()
    raw = np.random.default_rng(1).exponential(1.0, 100_000)
    assert abs(raw.mean() - 1) <= 0.02
    np.testing.assert_allclose(np.concatenate([a.w_t, a.w_c]), raw / raw.sum(), rtol=1e-12)
    c = restart_weights(5, 3, np.random.default_rng(2), balanced=True)
    assert c.total_t == pytest.approx(0.5) and c.total_c == pytest.approx(0.5)


def test_restart_rules():
    e = Errors(0.1, 0.55, 0.3)
    c = coefficients_adaboost(0.1, 0.55, 0.5, 0.5)
    assert not needs_restart(e, c)
    assert needs_restart(e, c, rule="group")


def test_error_bound_examples():
    r = IterationRecord(0.25, 0.25, 0.25, 1 / 3, 1 / 3, 1 / 3, False, 0.5, 0.5)
    assert error_bound([r]) == pytest.approx(math.sqrt(3) / 2, abs=1e-15)
    assert error_bound([]) == 1.0
    skipped = IterationRecord(0.6, 0.6, 0.6, 1.5, 1.5, 1.5, True, 0.5, 0.5)
    assert error_bound([r, skipped]) == error_bound([r])


def test_adaboost_bound_is_classical_product():
    e = fit_boosting(generate_synthetic(step_spec(300, seed=3)), BoostConfig(ADABOOST, 20))
    want = math.prod(2 * math.sqrt(r.eps * (1 - r.eps)) for r in e.history if not r.restarted)
    assert error_bound(e.history) == pytest.approx(want, abs=1e-12)


def test_balance_diagnostic():
    recs = [IterationRecord(0.1, 0.1, 0.1, 0.1, 0.1, 0.1, False, p, 1 - p) for p in (0.6, 0.55)]
    assert balance_diagnostic(recs) == pytest.approx(1.5)
    with pytest.raises(UsageError):
        balance_diagnostic([])


def _ensemble(betas, decisions):
    return BoostingEnsemble([(UpliftTree(Leaf(1.0 if h else -1.0), 1, 1), b)
                             for b, h in zip(betas, decisions)], ADABOOST)


def test_ensemble_decision_rule():
    x = np.array([0.0])
    one = _ensemble([1 / 3], [1])
    assert one.score(x) == pytest.approx(math.log(3)) and one.decide(x) == 1
    assert _ensemble([0.2, 0.3], [0, 0]).decide(x) == 0
    # a vote of exactly half the total decides 1
    assert _ensemble([0.25, 0.25], [1, 0]).decide(x) == 1
    assert _ensemble([0.25, 0.2], [1, 0]).decide(x) == 0
    with pytest.raises(UsageError):
        _ensemble([], []).decide(x)


def test_single_member_equals_base(four):
    e = fit_boosting(four, BoostConfig(ADABOOST, 1))
    assert len(e) == 1
    X = np.array([[0.0], [1.0], [0.3]])
    np.testing.assert_array_equal(e.decide(X), e.members[0][0].predict(X))


def test_perfect_pattern(four):
    X = np.tile([[0.0], [1.0]], (8, 1))
    d = make_dataset(X, np.tile([0, 1], 8), X, np.tile([1, 0], 8))
    for variant in (ADABOOST, BALANCED, BALANCED_FORGETTING):
        e = fit_boosting(d, BoostConfig(variant, 20))
        assert len(e) == 1 and e.history[-1].perfect
        assert training_error(e, d, init_weights(variant, 16, 16)).eps == 0.0


def test_empty_ensemble_error():
    # treatment always succeeds, so the only possible tree has zero treatment
    # error whatever the weights, which the balanced scheme rejects
    d = make_dataset([[0.0]] * 4, [1, 1, 1, 1], [[0.0]] * 4, [1, 0, 1, 0])
    with pytest.raises(EmptyEnsembleError) as info:
        fit_boosting(d, BoostConfig(BALANCED, 3))
    assert len(info.value.history) == 3 and all(r.restarted for r in info.value.history)


def _trace(d, variant, m=30):
    traces = []
    e = fit_boosting(d, BoostConfig(variant, m, seed=1), callback=traces.append)
    return e, traces


@pytest.mark.parametrize("variant", [BALANCED, BALANCED_FORGETTING])
def test_balance_invariant(variant):
    d = generate_synthetic(step_spec(300, seed=4, p0=0.5))
    e, traces = _trace(d, variant)
    for t in traces:
        assert abs(t.next_state.total_t - t.next_state.total_c) <= 1e-9
    assert balance_diagnostic(e.history) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("variant", [ADABOOST, BALANCED_FORGETTING])
def test_forgetting_invariant(variant):
    d = generate_synthetic(step_spec(300, seed=5))
    _, traces = _trace(d, variant)
    kept = [t for t in traces if not t.record.restarted and not t.record.perfect]
    assert kept
    for t in kept:
        assert errors_from_mistakes(t.wrong_t, t.wrong_c, t.next_state).eps == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("variant", [ADABOOST, BALANCED, BALANCED_FORGETTING])
def test_member_weight_is_min(variant):
    e = fit_boosting(generate_synthetic(step_spec(300, seed=6)), BoostConfig(variant, 25))
    for r in e.history:
        if not r.restarted:
            assert r.beta == min(r.beta_t, r.beta_c)
            assert 0 < r.beta < 1
            assert r.eps == pytest.approx(r.p_t * r.eps_t + r.p_c * r.eps_c, abs=1e-15)
    assert all(0 < b < 1 for _, b in e.members)


@pytest.mark.parametrize("seed", range(3))
def test_cvt_equivalence(seed):
    d = generate_synthetic(step_spec(200, seed=seed))
    cfg = BoostConfig(ADABOOST, 15, seed=seed)
    a, b = fit_boosting(d, cfg), adaboost_cvt_oracle(d, cfg)
    assert len(a) == len(b)
    for (ta, ba), (tb, bb) in zip(a.members, b.members):
        assert ta.root.split == tb.root.split
        assert ba == pytest.approx(bb, abs=1e-12)
    assert [r.restarted for r in a.history] == [r.restarted for r in b.history]
    X = d.treatment.X
    np.testing.assert_allclose(a.score(X), b.score(X), atol=1e-12)


def test_cvt_single_iteration_is_base(four):
    e = adaboost_cvt_oracle(four, BoostConfig(ADABOOST, 1))
    base = fit_tree(four)
    assert len(e) == 1 and e.members[0][0].root.split == base.root.split
    X = np.array([[0.0], [1.0]])
    np.testing.assert_array_equal(e.members[0][0].predict_score(X), base.predict_score(X))


def test_bagging():
    d = generate_synthetic(step_spec(200, seed=7))
    a = fit_bagging(d, BoostConfig(BAGGING, 10, seed=3))
    b = fit_bagging(d, BoostConfig(BAGGING, 10, seed=3))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert len(set(beta for _, beta in a.members)) == 1
    s = a.score(d.control.X) / a.vote_weights().sum()
    assert ((s >= 0) & (s <= 1)).all()
    one = fit_bagging(d, BoostConfig(BAGGING, 1, seed=3))
    assert len(one) == 1


def test_ensemble_json_round_trip(tmp_path):
    d = generate_synthetic(step_spec(200, seed=8))
    e = fit_boosting(d, BoostConfig(BALANCED, 10, max_depth=2))
    e.save(tmp_path / "e.json")
    f = BoostingEnsemble.load(tmp_path / "e.json")
    assert f.history == e.history and f.schema == e.schema
    np.testing.assert_array_equal(f.score(d.control.X), e.score(d.control.X))


def test_config_validation():
    for bad in ({"variant": "x"}, {"n_iterations": 0}, {"max_depth": 0}, {"penalty": 0.0},
                {"restart_rule": "never"}):
        with pytest.raises(UsageError):
            BoostConfig(**bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 3.0))
def test_balance_partner_keeps_totals_equal(eps_t, eps_c, beta_c):
    # totals after the update: eps + (1 - eps) * beta in each group
    beta_t = balance_partner(beta_c, eps_t, eps_c)
    assert eps_t + (1 - eps_t) * beta_t == pytest.approx(eps_c + (1 - eps_c) * beta_c, abs=1e-12)


@pytest.mark.parametrize("eps_t,eps_c", [(0.92, 0.95), (0.97, 0.93), (0.95, 0.95), (0.6, 0.98)])
def test_balanced_minimiser_beyond_ten(eps_t, eps_c):
    grid = np.arange(1, 300_001) * 1e-3
    a = (1 - eps_c) / (1 - eps_t)
    b = (eps_c - eps_t) / (1 - eps_t)
    denom = np.minimum(grid, a * grid + b)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(denom > 0, (1 - (1 - eps_c) * (1 - grid)) / np.sqrt(denom), np.inf)
    c = coefficients_balanced(eps_t, eps_c)
    assert abs(c.beta_c - grid[np.argmin(f)]) <= 1e-3
    assert f.min() == pytest.approx(balanced_bound_factor(eps_t, eps_c), abs=1e-6)
