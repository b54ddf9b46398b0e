import numpy as np
import pytest

from sharpshift.bounds import (
    DiscreteWorld,
    PacPenaltyInputs,
    exact_info_nce_expectation,
    make_random_world,
    pac_penalty,
    sup_loss_mean_classifier,
    surrogate_unsup_loss,
    verify_mean_classifier_step,
)
from sharpshift.errors import LabError

from oracles import (
    enumerate_info_nce,
    enumerate_sup_loss,
    enumerate_surrogate_loss,
    pac_penalty_direct,
)


def constant_world(m=2, n=3):
    return DiscreteWorld(
        priors=np.full(m, 1.0 / m),
        conditionals=np.full((m, n), 1.0 / n),
        features=np.tile(np.array([1.0, 0.0, 0.0]), (n, 1)),
    )


def orthogonal_world():
    # 2 classes, 4 points; each class concentrated on its own feature axis
    features = np.array([
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ])
    conditionals = np.array([
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.5],
    ])
    return DiscreteWorld(
        priors=np.array([0.4, 0.6]), conditionals=conditionals, features=features
    )


def antipodal_world():
    return DiscreteWorld(
        priors=np.array([0.5, 0.5]),
        conditionals=np.full((2, 2), 0.5),
        features=np.array([[1.0, 0.0], [-1.0, 0.0]]),
    )


# ----- world validation -------------------------------------------------------


def test_world_validation():
    with pytest.raises(LabError):
        DiscreteWorld(np.array([0.5, 0.6]), np.full((2, 2), 0.5), np.eye(2))
    with pytest.raises(LabError):
        DiscreteWorld(np.array([0.5, 0.5]), np.array([[0.9, 0.2], [0.5, 0.5]]), np.eye(2))
    with pytest.raises(LabError):
        DiscreteWorld(np.array([0.5, 0.5]), np.full((2, 2), 0.5), 2.0 * np.eye(2))


def test_world_is_immutable():
    world = constant_world()
    with pytest.raises(ValueError):
        world.features[0, 0] = 0.5


def test_p_data_and_p_pos_are_distributions():
    rng = np.random.default_rng(0)
    world = make_random_world(rng, n_points=5, n_classes=3, dim=4)
    assert world.p_data.sum() == pytest.approx(1.0, abs=1e-12)
    assert world.p_pos.sum() == pytest.approx(1.0, abs=1e-12)


# ----- mean-classifier supervised loss ------------------------------------------


def test_constant_features_give_log_m():
    for m in (2, 3):
        world = constant_world(m=m)
        assert sup_loss_mean_classifier(world, 1.0) == pytest.approx(np.log(m), abs=1e-12)


def test_single_class_is_zero():
    world = DiscreteWorld(
        priors=np.array([1.0]),
        conditionals=np.array([[0.25, 0.75]]),
        features=np.array([[1.0, 0.0], [0.0, 1.0]]),
    )
    assert sup_loss_mean_classifier(world, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_orthogonal_world_matches_independent_enumeration():
    world = orthogonal_world()
    ours = sup_loss_mean_classifier(world, 1.0)
    oracle = enumerate_sup_loss(
        world.priors, world.conditionals, world.features, 1.0
    )
    assert ours == pytest.approx(oracle, abs=1e-12)


def test_sup_loss_matches_oracle_on_random_worlds():
    rng = np.random.default_rng(1)
    for _ in range(20):
        world = make_random_world(rng, n_points=4, n_classes=3, dim=3)
        tau = rng.uniform(0.2, 2.0)
        ours = sup_loss_mean_classifier(world, tau)
        oracle = enumerate_sup_loss(world.priors, world.conditionals, world.features, tau)
        assert ours == pytest.approx(oracle, abs=1e-10)


# ----- surrogate loss -------------------------------------------------------------


def test_constant_feature_surrogate_is_zero():
    assert surrogate_unsup_loss(constant_world(), 0.7) == pytest.approx(0.0, abs=1e-12)


def test_antipodal_world_closed_form():
    # term1 = 0 by symmetry; term2 = log cosh(1/tau)
    for tau in (0.5, 1.0, 2.0):
        ours = surrogate_unsup_loss(antipodal_world(), tau)
        assert ours == pytest.approx(np.log(np.cosh(1.0 / tau)), abs=1e-12)


def test_surrogate_lower_bound():
    rng = np.random.default_rng(2)
    for _ in range(50):
        world = make_random_world(rng, n_points=5, n_classes=2, dim=3)
        tau = rng.uniform(0.2, 2.0)
        assert surrogate_unsup_loss(world, tau) >= -2.0 / tau - 1e-12


def test_surrogate_matches_oracle_on_random_worlds():
    rng = np.random.default_rng(3)
    for _ in range(20):
        world = make_random_world(rng, n_points=4, n_classes=2, dim=3)
        tau = rng.uniform(0.2, 2.0)
        ours = surrogate_unsup_loss(world, tau)
        oracle = enumerate_surrogate_loss(
            world.priors, world.conditionals, world.features, tau
        )
        assert ours == pytest.approx(oracle, abs=1e-10)


# ----- exact K-negative expectation -----------------------------------------------


def test_constant_world_expectation_is_log_one_plus_beta():
    world = constant_world()
    for beta, k in ((1.0, 1), (3.0, 2), (0.5, 4)):
        res = exact_info_nce_expectation(world, 1.0, beta, k)
        assert res.exact
        assert res.value == pytest.approx(np.log1p(beta), abs=1e-12)


def test_multiset_enumeration_matches_ordered_product_oracle():
    rng = np.random.default_rng(4)
    for _ in range(5):
        world = make_random_world(rng, n_points=3, n_classes=2, dim=3)
        tau, beta, k = rng.uniform(0.3, 1.5), rng.uniform(0.5, 4.0), int(rng.integers(1, 4))
        ours = exact_info_nce_expectation(world, tau, beta, k)
        oracle = enumerate_info_nce(
            world.priors, world.conditionals, world.features, tau, beta, k
        )
        assert ours.value == pytest.approx(oracle, abs=1e-10)


def test_enumeration_agrees_with_monte_carlo():
    rng = np.random.default_rng(5)
    world = make_random_world(rng, n_points=3, n_classes=2, dim=3)
    exact = exact_info_nce_expectation(world, 0.5, 2.0, 2)
    mc = _force_mc(world, 0.5, 2.0, 2, samples=100_000, seed=11)
    assert abs(mc.value - exact.value) <= 3.0 * mc.stderr


def _force_mc(world, tau, beta, k, samples, seed):
    from sharpshift.bounds import _mc_expectation

    return _mc_expectation(world, tau, beta, k, samples, seed)


def test_k_trend_gap_shrinks():
    rng = np.random.default_rng(6)
    world = make_random_world(rng, n_points=4, n_classes=2, dim=3)
    tau = 0.5
    surrogate = surrogate_unsup_loss(world, tau)
    gaps = {}
    for k in (1, 2, 4, 8):
        res = exact_info_nce_expectation(world, tau, float(k), k)
        assert res.exact
        gaps[k] = abs(res.value - surrogate - np.log(k))
    assert gaps[8] < gaps[1]


def test_guard_requires_mc_fallback():
    rng = np.random.default_rng(7)
    world = make_random_world(rng, n_points=6, n_classes=2, dim=3)
    # C(200 + 5, 5) is astronomically over the multiset guard
    with pytest.raises(LabError):
        exact_info_nce_expectation(world, 0.5, 1.0, 200)
    res = exact_info_nce_expectation(world, 0.5, 1.0, 200, mc_samples=2000, seed=3)
    assert not res.exact and res.stderr > 0.0


def test_invalid_parameters_rejected():
    world = constant_world()
    with pytest.raises(LabError):
        exact_info_nce_expectation(world, 1.0, 1.0, 0)
    with pytest.raises(LabError):
        exact_info_nce_expectation(world, 1.0, -1.0, 2)


# ----- mean-classifier inequality ---------------------------------------------------


def test_constant_feature_world_is_exactly_tight():
    check = verify_mean_classifier_step(constant_world(m=2), 1.0)
    assert check.holds
    assert abs(check.slack) < 1e-9
    assert check.lhs == pytest.approx(np.log(2), abs=1e-12)


def test_single_class_world_holds():
    world = DiscreteWorld(
        priors=np.array([1.0]),
        conditionals=np.array([[0.3, 0.7]]),
        features=np.array([[1.0, 0.0], [0.0, 1.0]]),
    )
    check = verify_mean_classifier_step(world, 0.8)
    assert check.holds and check.lhs == pytest.approx(0.0, abs=1e-12)


def test_holds_on_random_worlds():
    rng = np.random.default_rng(8)
    for _ in range(50):
        world = make_random_world(
            rng,
            n_points=int(rng.integers(2, 7)),
            n_classes=int(rng.integers(2, 4)),
            dim=3,
        )
        tau = rng.uniform(0.2, 2.0)
        assert verify_mean_classifier_step(world, tau).holds


# ----- PAC penalty ---------------------------------------------------------------


def test_frozen_reference_value():
    # independently computed before the module existed
    inputs = PacPenaltyInputs(
        n_samples=100, n_params=10, delta=0.1, rho=0.05, tau=0.5,
        beta_neg=1.0, theta_norm=2.0,
    )
    assert pac_penalty(inputs) == pytest.approx(8.521455369914719, rel=1e-12)


def test_zero_theta_kills_log_term():
    a = PacPenaltyInputs(100, 10, 0.1, 0.05, 0.5, 1.0, 0.0)
    manual = (
        (0.5 + np.log(10.0) + 6.0 * np.log(110.0)) / 10.0
        + (2.0 / 0.5 + np.log(2.0)) ** 2 / 80.0
        + 2.0 * (2.0 / 0.5 + np.log(2.0)) / 10.0
    )
    assert pac_penalty(a) == pytest.approx(manual, rel=1e-12)


def test_matches_direct_formula_on_random_inputs():
    rng = np.random.default_rng(9)
    for _ in range(20):
        inputs = PacPenaltyInputs(
            n_samples=int(rng.integers(2, 100_000)),
            n_params=int(rng.integers(1, 1_000_000)),
            delta=float(rng.uniform(0.001, 0.999)),
            rho=float(rng.uniform(0.01, 5.0)),
            tau=float(rng.uniform(0.05, 3.0)),
            beta_neg=float(rng.uniform(0.0, 10.0)),
            theta_norm=float(rng.uniform(0.0, 100.0)),
        )
        direct = pac_penalty_direct(
            inputs.n_samples, inputs.n_params, inputs.delta, inputs.rho,
            inputs.tau, inputs.beta_neg, inputs.theta_norm,
        )
        assert abs(pac_penalty(inputs) - direct) / direct < 1e-10


def test_monotonicities():
    base = dict(n_samples=500, n_params=50, delta=0.1, rho=0.1, tau=0.5,
                beta_neg=2.0, theta_norm=3.0)
    p0 = pac_penalty(PacPenaltyInputs(**base))
    assert pac_penalty(PacPenaltyInputs(**{**base, "theta_norm": 6.0})) > p0
    assert pac_penalty(PacPenaltyInputs(**{**base, "n_params": 200})) > p0
    assert pac_penalty(PacPenaltyInputs(**{**base, "delta": 0.01})) > p0
    assert pac_penalty(PacPenaltyInputs(**{**base, "delta": 0.5})) < p0


def test_input_validation():
    with pytest.raises(LabError):
        PacPenaltyInputs(0, 10, 0.1, 0.1, 0.5, 1.0, 1.0)
    with pytest.raises(LabError):
        PacPenaltyInputs(10, 10, 1.5, 0.1, 0.5, 1.0, 1.0)
    with pytest.raises(LabError):
        PacPenaltyInputs(10, 10, 0.1, 0.0, 0.5, 1.0, 1.0)
    with pytest.raises(LabError):
        PacPenaltyInputs(10, 10, 0.1, 0.1, 0.5, -1.0, 1.0)
