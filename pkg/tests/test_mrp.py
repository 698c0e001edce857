import numpy as np
import pytest
from conftest import point, random_distribution, random_graph
from oracles import central_difference, matrix_power_value, mrp_loss

from equiaug.graph import DiGraph, GroupSpec, RewardSet, build_transition
from equiaug.mrp import (
    Adam,
    EdgeLogits,
    EdgeProblem,
    TrainConfig,
    discretize,
    evaluate_logits,
    gradient,
    group_value,
    gumbel_edge_sample,
    gumbel_noise,
    loss,
    optimize_edges,
    recommended_gamma,
    social_defaults,
    synthetic_defaults,
    train,
    update_lagrangians,
    value_rollout,
)

CHAIN_P = np.array([[0.0, 1.0], [0.0, 1.0]])


def test_rollout_zero_reward():
    rng = np.random.default_rng(0)
    P = rng.random((5, 5))
    P /= P.sum(axis=1, keepdims=True)
    assert value_rollout(P, np.zeros(5), np.full(5, 0.2), 7, 0.9) == 0.0


def test_rollout_single_step_on_reward():
    assert value_rollout(CHAIN_P, np.array([0.0, 1.0]), point(2, 1), 1, 0.5) == 1.0


def test_rollout_two_node_chain():
    v = value_rollout(CHAIN_P, np.array([0.0, 1.0]), point(2, 0), 3, 0.5)
    assert v == 0.75
    assert v == pytest.approx(matrix_power_value(CHAIN_P, [0, 1], point(2, 0), 3, 0.5))


def test_group_value_linearity():
    rng = np.random.default_rng(1)
    P = rng.random((4, 4))
    P /= P.sum(axis=1, keepdims=True)
    R = np.array([0, 0, 1.0, 0])
    a = group_value(P, R, point(4, 0), 5, 0.9)
    b = group_value(P, R, point(4, 3), 5, 0.9)
    assert group_value(P, R, point(4, 0), 5, 0.9) == value_rollout(P, R, point(4, 0), 5, 0.9)
    assert group_value(P, R, np.array([0.5, 0, 0, 0.5]), 5, 0.9) == pytest.approx((a + b) / 2)


def test_minibatch_estimate_converges():
    from equiaug.mrp import sample_start_distribution

    rng = np.random.default_rng(2)
    g = random_graph(rng, 10)
    grp = GroupSpec("g", random_distribution(rng, 10))
    P = build_transition(g, None, grp)
    R = RewardSet((0,)).indicator(10)
    exact = group_value(P, R, grp.mu0, 6, 0.9)
    # per-state values give the sampling variance exactly
    per = np.array([value_rollout(P, R, point(10, v), 6, 0.9) for v in range(10)])
    sd = np.sqrt(grp.mu0 @ (per - exact) ** 2)
    est = [group_value(P, R, sample_start_distribution(grp.mu0, 64, rng), 6, 0.9) for _ in range(400)]
    assert abs(np.mean(est) - exact) < 3 * sd / np.sqrt(64 * 400)


def test_sigmoid_midpoint():
    lg = EdgeLogits(np.zeros(1), np.array([[0, 1]]), 2, tau=1.0)
    assert gumbel_edge_sample(lg, None, noise_on=False)[0, 1] == 0.5


def test_saturation():
    lg = EdgeLogits(np.array([800.0]), np.array([[0, 1]]), 2, tau=0.3)
    assert gumbel_edge_sample(lg, 7)[0, 1] == 1.0


def test_same_seed_same_noise():
    lg = EdgeLogits(np.linspace(-1, 1, 5), np.array([[0, i] for i in range(1, 6)]), 6)
    np.testing.assert_array_equal(gumbel_edge_sample(lg, 42), gumbel_edge_sample(lg, 42))
    np.testing.assert_array_equal(gumbel_noise(np.random.default_rng(3), 9), gumbel_noise(np.random.default_rng(3), 9))


def test_loss_single_group_has_no_equity_term():
    cfg = TrainConfig(mu_equity=5.0, lambda_equity=2.0, B=10)
    assert loss([0.7], 3.0, cfg) == pytest.approx(-0.7)


def test_loss_under_budget_has_no_budget_term():
    cfg = TrainConfig(mu_budget=5.0, lambda_budget=2.0, B=10)
    assert loss([0.7, 0.7], 10.0, cfg) == pytest.approx(-1.4)


def test_loss_worked_example():
    cfg = TrainConfig(mu_equity=1.0, lambda_equity=0.1, B=10)
    assert loss([1.0, 0.0], 5.0, cfg) == pytest.approx(0.1, abs=1e-15)


def test_lagrangian_updates():
    cfg = TrainConfig(mu_equity=0.1, mu_budget=0.5)
    assert update_lagrangians(cfg, 2.0, 0.0) == (pytest.approx(0.2), 0.0)
    lam = (0.3, 0.4)
    new = update_lagrangians(cfg, 1.0, 2.0, lam)
    assert new[0] >= lam[0] and new[1] >= lam[1]


@pytest.mark.parametrize("t_adv, gamma", [(10, 0.9), (1, 0.0), (2, 0.5)])
def test_recommended_gamma(t_adv, gamma):
    assert recommended_gamma(t_adv) == pytest.approx(gamma)


def test_presets():
    s = synthetic_defaults()
    assert (s.B, s.T, s.gamma, s.epochs, s.nu) == (400, 10, 0.99, 700, 0.999)
    assert (s.equity_start_epoch, s.budget_start_epoch, s.anneal_start_epoch) == (0, 100, 200)
    so = social_defaults(1000)
    assert (so.T, so.gamma, so.nu, so.anneal_start_epoch, so.epochs) == (3, 0.7, 0.995, 300, 1000)
    assert so.B == 200
    assert so.mu_equity == 10000


def test_discretize_cases():
    mask = np.array([[0, 1], [0, 2], [1, 2], [2, 0], [2, 1]])
    assert len(discretize(np.full(5, -8.0), mask, 3)) == 0
    two = discretize(np.array([5.0, -5, 4, -5, -5]), mask, 2)
    assert two.sorted() == [(0, 1), (1, 2)]
    ties = discretize(np.array([3.0, 3.0, 1.0, 3.0, 2.0]), mask, 2)
    assert ties.sorted() == [(0, 1), (0, 2)]


def _small_problem(seed, absorbing=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 12))
    g = random_graph(rng, n, weighted_groups=2)
    groups = [GroupSpec(f"g{k}", random_distribution(rng, n), "explicit") for k in range(2)]
    rew = RewardSet(tuple(int(v) for v in rng.choice(n, size=2, replace=False)))
    return rng, g, groups, rew


@pytest.mark.parametrize("absorbing", [False, True])
def test_forward_matches_oracle(absorbing):
    rng, g, groups, rew = _small_problem(4, absorbing)
    cfg = TrainConfig(B=2.0, T=5, gamma=0.9, mu_equity=0.7, mu_budget=0.3, epochs=0)
    prob = EdgeProblem(g, groups, rew, cfg.T, cfg.gamma, absorbing)
    theta = rng.normal(size=prob.num_params)
    noise = gumbel_noise(rng, prob.num_params)
    ev = evaluate_logits(prob, theta, 0.8, noise, prob.mus, cfg, (0.3, 0.2), want_grad=False)
    ref = mrp_loss(g, groups, rew, theta, noise, 0.8, 5, 0.9, absorbing, 2.0, 0.7, 0.3, 0.3, 0.2)
    assert ev.loss == pytest.approx(ref, rel=1e-10)


def test_gradient_matches_finite_differences():
    rng, g, groups, rew = _small_problem(8)
    cfg = TrainConfig(B=1.0, T=4, gamma=0.95, mu_equity=0.5, mu_budget=0.2, lambda_equity=0.1, epochs=0)
    prob = EdgeProblem(g, groups, rew, cfg.T, cfg.gamma)
    theta = rng.normal(size=prob.num_params)
    seed = 17
    noise = gumbel_noise(np.random.default_rng(seed), prob.num_params)
    ours = gradient(prob, theta, cfg, seed)
    fd = central_difference(lambda t: evaluate_logits(prob, t, cfg.tau0, noise, prob.mus, cfg, want_grad=False).loss, theta)
    assert np.linalg.norm(ours - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)


def _with_out_edges(g):
    """Add a directed cycle so every row carries base weight."""
    from equiaug.graph import DiGraph

    ring = {(i, (i + 1) % g.n) for i in range(g.n)}
    return DiGraph(g.n, g.edges | ring, g.mask - ring)


def test_saturated_logits_have_flat_gradient():
    _, g, _, rew = _small_problem(3)
    g = _with_out_edges(g)
    groups = [GroupSpec("a", np.full(g.n, 1 / g.n))]
    prob = EdgeProblem(g, groups, rew, 5, 0.9)
    grad = gradient(prob, np.full(prob.num_params, -60.0), TrainConfig(), None, noise_on=False)
    assert np.abs(grad).max() < 1e-20


def test_rows_without_base_edges_stay_sensitive():
    # with no base weight a row is x_ij / sum(x): scale-free, so even tiny
    # soft edits set it and their relative size keeps an O(1) gradient
    from equiaug.graph import DiGraph

    g = DiGraph(3, frozenset({(1, 2)}), frozenset({(0, 1), (0, 2)}))
    prob = EdgeProblem(g, [GroupSpec("a", point(3, 0))], RewardSet((2,)), 3, 0.9)
    theta = np.array([-60.0, -61.0])
    cfg = TrainConfig(epochs=0)
    ours = gradient(prob, theta, cfg, None, noise_on=False)
    fd = central_difference(
        lambda t: evaluate_logits(prob, t, 1.0, None, prob.mus, cfg, want_grad=False).loss, theta)
    np.testing.assert_allclose(ours, fd, rtol=1e-6)
    assert np.abs(ours).max() > 0.01


def test_zero_reward_leaves_only_budget_gradient():
    g = DiGraph(3, frozenset({(0, 1)}), frozenset({(0, 2), (1, 2)}))
    groups = [GroupSpec("a", point(3, 0)), GroupSpec("b", point(3, 1))]

    class NoReward(EdgeProblem):
        def __init__(self, *a):
            super().__init__(*a)
            self.R = np.zeros(self.n)

    prob = NoReward(g, groups, RewardSet((2,)), 4, 0.9)
    theta = np.array([0.5, -0.2])
    cfg = TrainConfig(B=0.5, mu_budget=1.0, lambda_budget=0.3, epochs=0)
    grad = gradient(prob, theta, cfg, None, noise_on=False)
    x = 1 / (1 + np.exp(-theta))
    exc = x.sum() - 0.5
    np.testing.assert_allclose(grad, (2 * exc + 0.3) * x * (1 - x), rtol=1e-12)


def test_zero_epochs_keeps_initial_logits(chain, chain_groups, reward3):
    logits, traj = train(chain, chain_groups, reward3, TrainConfig(epochs=0, init_logit=-2.5))
    assert np.all(logits.values == -2.5)
    assert len(traj) == 0


def test_training_is_reproducible(chain, chain_groups, reward3):
    cfg = TrainConfig(B=1, epochs=40, equity_start_epoch=0, budget_start_epoch=10, anneal_start_epoch=20, seed=5)
    a = optimize_edges(chain, chain_groups, reward3, cfg)
    b = optimize_edges(chain, chain_groups, reward3, cfg)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1].values, b[1].values)
    assert a[2].to_csv() == b[2].to_csv()


def test_trajectory_rows_and_columns(chain, chain_groups, reward3):
    cfg = TrainConfig(B=1, epochs=30, budget_start_epoch=5, anneal_start_epoch=10, seed=1)
    _, traj = train(chain, chain_groups, reward3, cfg)
    assert len(traj) == 30
    tau = traj.column("tau")
    assert np.all(tau[:11] == 1.0) and tau[-1] < 1.0
    lam = traj.column("lambda_equity")
    assert np.all(np.diff(lam) >= 0)
    lines = traj.to_csv().splitlines()
    assert lines[0].startswith("epoch,") and len(lines) == 31


def test_adam_first_step_is_lr_sized():
    opt = Adam(3, lr=0.1)
    out = opt.step(np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    np.testing.assert_allclose(out, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=50)  # schedule starts past the last epoch
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(T=0)
