import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.special import expit

from conftest import make_space
from robustpref.diagnostics import (
    DiagnosticsReport,
    brute_force_risk_minimizer,
    calibration_sign_ok,
    conditional_risk,
    cpe_recovery_error,
    expanding_box_minimizer,
    is_rank_preserving,
    optimal_conditional_risk,
    rank_preservation_rate,
    reward_accuracy,
    sign0,
)
from robustpref.errors import DomainError
from robustpref.losses import make_loss, zoo
from robustpref.prefgen import NoiseSpec, exact_dataset, flip_symmetrize, generate_tabular, inject_noise
from robustpref.riskcore import RewardModel, TrainConfig, train_reward
from robustpref.rng import stream

BOUNDED = [l for l in zoo() if l.bounded_below]


# --- accuracy and ranking --------------------------------------------------------------------


def test_sign_zero_is_positive():
    np.testing.assert_array_equal(sign0([-2.0, 0.0, 3.0]), [-1, 1, 1])


def test_reward_accuracy_trivial_cases():
    ds = generate_tabular(20, "linear", 2000, stream(0, "d"))
    truth = ds.space.true_reward
    assert reward_accuracy(truth, ds) == 1.0
    assert reward_accuracy(RewardModel.tabular(-truth), ds) == 0.0
    with pytest.raises(DomainError):
        reward_accuracy(truth, ds.subset(np.zeros(len(ds), dtype=bool)))


def test_random_model_accuracy_near_half():
    n = 20_000
    ds = generate_tabular(500, "random", n, stream(1, "d"))
    acc = reward_accuracy(stream(1, "model").normal(size=500), ds)
    assert abs(acc - 0.5) < 3 * math.sqrt(0.25 / n) + 0.02


def test_rank_rate_examples():
    space = make_space([0.0, 1.0, 2.0, 3.0, 4.0])
    assert rank_preservation_rate(np.exp(space.true_reward), space) == 1.0
    assert rank_preservation_rate(np.array([0.0, 2.0, 1.0, 3.0, 4.0]), space) == pytest.approx(9 / 10)
    assert rank_preservation_rate(np.full(5, 7.0), space) == 0.0
    assert is_rank_preserving(space.true_reward * 3 + 1, space)
    with pytest.raises(DomainError):
        rank_preservation_rate(np.zeros(3), make_space([1.0, 1.0, 1.0]))


def test_report_checks_fractions():
    DiagnosticsReport(reward_accuracy=0.5, rank_preservation_rate=1.0)
    with pytest.raises(DomainError):
        DiagnosticsReport(reward_accuracy=1.5)


# --- posterior recovery ----------------------------------------------------------------------


def test_cpe_recovery_examples():
    space = make_space([0.4, -1.0, 2.0, 0.0])
    assert cpe_recovery_error(space.true_reward, space, make_loss("logistic")) == 0.0
    with pytest.raises(DomainError):
        cpe_recovery_error(space.true_reward, space, make_loss("sigmoid"))
    model, _ = train_reward(exact_dataset(space), TrainConfig(loss="logistic", learning_rate=2.0, epochs=3000))
    assert cpe_recovery_error(model, space, make_loss("logistic")) < 1e-2


def test_squared_recovers_posteriors_only_when_gaps_can_represent_them():
    squared = make_loss("squared")
    cfg = TrainConfig(loss="squared", learning_rate=0.2, epochs=3000)
    two = make_space([1.0, 0.0])
    model, _ = train_reward(exact_dataset(two), cfg)
    assert cpe_recovery_error(model, two, squared) < 1e-6
    # with three actions, 2*sigma(gap) - 1 is not a difference of per-action scores
    three = make_space([1.0, 0.0, -0.5])
    model, trace = train_reward(exact_dataset(three), cfg)
    assert trace.grad_norm[-1] < 1e-8
    assert cpe_recovery_error(model, three, squared) > 1e-2
    assert rank_preservation_rate(model, three) == 1.0


def test_ramp_ranks_correctly():
    space = make_space([1.0, 0.0, -0.5])
    ds = exact_dataset(space)
    ramp, _ = train_reward(ds, TrainConfig(loss="ramp", learning_rate=1.0, epochs=500))
    assert rank_preservation_rate(ramp, space) == 1.0


# --- conditional risk --------------------------------------------------------------------------


def test_conditional_risk_half_is_flat_for_symmetric_losses():
    alpha = np.linspace(-40, 40, 2001)
    for name, k in (("sigmoid", 1.0), ("ramp", 1.0), ("unhinged", 2.0)):
        np.testing.assert_allclose(conditional_risk(make_loss(name), 0.5, alpha), k / 2, atol=1e-12, rtol=0)
    with pytest.raises(DomainError):
        conditional_risk(make_loss("sigmoid"), 1.2, 0.0)


def test_hinge_at_certainty():
    opt = optimal_conditional_risk(make_loss("hinge"), 1.0)
    assert opt.value == 0.0 and opt.argmin >= 1.0


def test_sigmoid_calibration_spot_check():
    opt = optimal_conditional_risk(make_loss("sigmoid"), 0.7)
    assert opt.argmin > 0 and opt.at_boundary
    assert calibration_sign_ok(make_loss("sigmoid"), 0.7)


def test_unbounded_loss_has_no_conditional_optimum():
    with pytest.raises(DomainError):
        optimal_conditional_risk(make_loss("unhinged"), 0.7)
    with pytest.raises(DomainError):
        calibration_sign_ok(make_loss("sigmoid"), 0.5)


@pytest.mark.parametrize("loss", BOUNDED, ids=lambda l: l.label)
def test_calibration_sign_grid(loss):
    for eta in (0.0, 0.05, 0.2, 0.45, 0.49, 0.51, 0.55, 0.8, 0.95, 1.0):
        assert calibration_sign_ok(loss, eta), eta


@settings(max_examples=50, deadline=None)
@given(eta=st.floats(0.0, 1.0), alpha=st.floats(-30, 30))
def test_conditional_optimum_lower_bounds_conditional_risk(eta, alpha):
    for loss in (make_loss("logistic"), make_loss("sigmoid"), make_loss("hinge")):
        assert optimal_conditional_risk(loss, eta).value <= conditional_risk(loss, eta, alpha) + 1e-9


# --- brute-force oracle ---------------------------------------------------------------------------


def test_oracle_two_action_logistic_gap():
    ds = exact_dataset(make_space([1.0, 0.0]))
    model = brute_force_risk_minimizer(ds, make_loss("logistic"), label_view="clean")
    assert model.params[0] == 0.0
    assert abs((model.params[0] - model.params[1]) - 1.0) < 1e-2


def test_oracle_three_action_sigmoid_preserves_rank():
    space = make_space([0.5, 2.0, -1.0])
    model = expanding_box_minimizer(exact_dataset(space), make_loss("sigmoid"), label_view="clean")
    assert rank_preservation_rate(model, space) == 1.0


def test_oracle_refusals():
    with pytest.raises(DomainError):
        brute_force_risk_minimizer(exact_dataset(make_space(np.arange(6.0))), make_loss("sigmoid"))
    with pytest.raises(DomainError):
        brute_force_risk_minimizer(generate_tabular(3, "linear", 20, stream(0, "d")), make_loss("sigmoid"))


def test_oracle_boundary_flag_and_expansion():
    space = make_space([1.0, 0.0, -1.0])
    ds = exact_dataset(space)
    inner = brute_force_risk_minimizer(ds, make_loss("sigmoid"), label_view="clean")
    assert inner.provenance["at_boundary"]
    grown = expanding_box_minimizer(ds, make_loss("sigmoid"), label_view="clean")
    assert grown.provenance["box"][1] > 5.0
    assert grown.provenance["risk"] <= inner.provenance["risk"]


@pytest.mark.parametrize("name", ["sigmoid", "ramp"])
def test_symmetrized_noisy_minimizer_ranks_like_clean_minimizer(name):
    space = make_space([0.8, -0.6, 0.1])
    clean = exact_dataset(space)
    noisy = flip_symmetrize(inject_noise(clean, NoiseSpec(0.0, 0.6)))
    loss = make_loss(name)
    a = expanding_box_minimizer(clean, loss, label_view="clean").params
    b = expanding_box_minimizer(noisy, loss, label_view="noisy").params
    np.testing.assert_array_equal(np.argsort(a), np.argsort(b))


def _hinge_lp(true_reward, order_margin=None):
    """Exact minimal hinge risk over tabular rewards by linear programming, optionally forcing the true order."""
    k = len(true_reward)
    pairs = [(i, j) for i in range(k) for j in range(k) if i != j]
    nv = k + 2 * len(pairs)
    c = np.zeros(nv)
    a_ub, b_ub = [], []
    for p, (i, j) in enumerate(pairs):
        eta = expit(true_reward[i] - true_reward[j])
        s_pos, s_neg = k + 2 * p, k + 2 * p + 1
        c[s_pos], c[s_neg] = eta / len(pairs), (1 - eta) / len(pairs)
        for slack, sign in ((s_pos, 1.0), (s_neg, -1.0)):
            row = np.zeros(nv)
            row[slack] = -1.0
            row[i] -= sign
            row[j] += sign
            a_ub.append(row)
            b_ub.append(-1.0)
    if order_margin is not None:
        order = np.argsort(true_reward)
        for lo, hi in zip(order[:-1], order[1:]):
            row = np.zeros(nv)
            row[lo], row[hi] = 1.0, -1.0
            a_ub.append(row)
            b_ub.append(-order_margin)
    bounds = [(0, 0)] + [(-10, 10)] * (k - 1) + [(0, None)] * (2 * len(pairs))
    return linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds).fun


def test_hinge_minimizer_ties_actions_on_pinned_instance():
    true_reward = np.array([0.0, -1.14448999, 1.71673499, 0.572245])
    space = make_space(true_reward)
    model = expanding_box_minimizer(exact_dataset(space), make_loss("hinge"))
    np.testing.assert_allclose(model.params, [0.0, -1.0, 1.0, 0.0], atol=1e-9)
    assert rank_preservation_rate(model, space) == pytest.approx(5 / 6)
    free = _hinge_lp(true_reward)
    assert model.provenance["risk"] == pytest.approx(free, abs=1e-12)
    # every strictly order-preserving reward pays a risk penalty linear in its margin
    for delta in (1e-3, 1e-2, 1e-1):
        assert _hinge_lp(true_reward, delta) - free == pytest.approx(0.013354382660923925 * delta, rel=1e-6)
