import numpy as np
import pytest

from fairflip.graph import make_graph, generate_sbm, TRAIN, TEST
from fairflip.surrogate import (AggregatedFeatures, SurrogateClassifier,
                                _surrogate_loss_and_grad, aggregate, ce_loss,
                                kde_density, sigmoid, soft_predict, tv_loss,
                                train_surrogate)

SQRT_2PI = np.sqrt(2 * np.pi)


def dense_aggregation_oracle(graph):
    """Independent dense-matrix route: D^-1 (A+I) D^-1 (A+I) X."""
    n = graph.n
    a = np.zeros((n, n))
    for (u, v) in graph.edges:
        a[u, v] = a[v, u] = 1.0
    ahat = a + np.eye(n)
    dhat = ahat.sum(axis=1)
    return (ahat @ ((ahat @ graph.x) / dhat[:, None])) / dhat[:, None]


def graph_with_edges(x, edges, sensitive=None, labels=None, split=None):
    n = len(x)
    x = np.asarray(x, dtype=float).reshape(n, -1)
    sensitive = sensitive if sensitive is not None else [i % 2 for i in range(n)]
    labels = labels if labels is not None else [i % 2 for i in range(n)]
    split = split if split is not None else [TEST] * n
    return make_graph(x, labels, np.ones(n, bool), sensitive, split, edges)


class TestAggregate:
    def test_isolated_pair_is_identity(self):
        g = graph_with_edges([[1.0], [3.0]], edges=[], sensitive=[0, 1])
        zf = aggregate(g)
        np.testing.assert_array_equal(zf.dhat, [1.0, 1.0])
        np.testing.assert_allclose(zf.z, [[1.0], [3.0]])

    def test_connected_pair_hand_computation(self):
        g = graph_with_edges([[1.0], [3.0]], edges=[(0, 1)], sensitive=[0, 1])
        zf = aggregate(g)
        np.testing.assert_array_equal(zf.dhat, [2.0, 2.0])
        np.testing.assert_allclose(zf.ax, [[4.0], [4.0]])
        # Z0 = (1/4)*4 + (1/4)*4 = 2, same for Z1
        np.testing.assert_allclose(zf.z, [[2.0], [2.0]])

    def test_matches_dense_oracle(self):
        g = generate_sbm(n=50, d_x=7, homophily=0.6, label_noise=0.1, seed=2)
        zf = aggregate(g)
        np.testing.assert_allclose(zf.z, dense_aggregation_oracle(g), atol=1e-12)


class TestPredict:
    def test_zero_theta_gives_half(self):
        g = generate_sbm(n=20, d_x=3, homophily=0.5, label_noise=0.1, seed=0)
        p = soft_predict(aggregate(g), np.zeros(3))
        np.testing.assert_allclose(p, 0.5)

    def test_boundary_logit_is_positive_class(self):
        from fairflip.surrogate import hard_predict
        assert hard_predict(np.array([0.0]))[0] == 1
        assert hard_predict(np.array([-1e-300]))[0] == 0

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(30, 4))
        theta = rng.normal(size=4)
        zf = AggregatedFeatures(z=z, ax=z, dhat=np.ones(30))
        p = soft_predict(zf, theta)
        for i in range(30):
            scalar = 1.0 / (1.0 + np.exp(-float(np.dot(z[i], theta))))
            assert abs(p[i] - scalar) <= 1e-15


class TestKde:
    def test_kernel_at_origin(self):
        h = 0.25
        val = kde_density([0.5], [0], z=0.5, h=h)
        assert val == pytest.approx(1.0 / (h * SQRT_2PI))

    def test_closed_form_one_bandwidth_away(self):
        # (1/0.1) * K(1) = 10 * exp(-0.5)/sqrt(2*pi)
        val = kde_density([0.5], [0], z=0.6, h=0.1)
        assert val == pytest.approx(10.0 * np.exp(-0.5) / SQRT_2PI, rel=1e-12)
        assert val == pytest.approx(2.4197, abs=1e-4)

    def test_mass_integrates_to_one_on_wide_grid(self):
        rng = np.random.default_rng(3)
        preds = rng.uniform(0.2, 0.8, size=40)
        grid = np.linspace(-2, 3, 20001)
        dens = kde_density(preds, np.arange(40), grid, h=0.1)
        mass = np.trapezoid(dens, grid)
        assert abs(mass - 1.0) <= 1e-2

    def test_empty_group_raises(self):
        with pytest.raises(ValueError):
            kde_density([0.5], [], z=0.5, h=0.1)


class TestTvLoss:
    def test_identical_multisets_give_zero(self):
        preds = np.array([0.2, 0.7, 0.4, 0.2, 0.7, 0.4])
        sens = np.array([0, 0, 0, 1, 1, 1])
        assert tv_loss(preds, sens, h=0.1, m=1000) == 0.0

    def test_disjoint_bumps_against_independent_integrator(self):
        preds = np.concatenate([np.full(20, 0.1), np.full(20, 0.9)])
        sens = np.concatenate([np.zeros(20, int), np.ones(20, int)])
        got = tv_loss(preds, sens, h=0.1, m=10000)
        assert got > 1.5
        # oracle: adaptive quadrature of |K_h(z-0.1) - K_h(z-0.9)| over [0,1]
        from scipy.integrate import quad
        f = lambda z: abs(np.exp(-0.5 * ((z - 0.1) / 0.1) ** 2)
                          - np.exp(-0.5 * ((z - 0.9) / 0.1) ** 2)) / (0.1 * SQRT_2PI)
        oracle, _ = quad(f, 0, 1, limit=200)
        assert got == pytest.approx(oracle, abs=1e-3)

    def test_group_swap_invariance(self):
        rng = np.random.default_rng(4)
        preds = rng.random(30)
        sens = rng.integers(0, 2, 30)
        sens[:2] = [0, 1]
        assert tv_loss(preds, sens, 0.1, 500) == pytest.approx(
            tv_loss(preds, 1 - sens, 0.1, 500), abs=1e-15)


class TestCeLoss:
    def test_confident_correct_is_tiny(self):
        preds = np.array([1.0 - 1e-13, 1e-13])
        labels = np.array([1, 0])
        assert ce_loss(preds, labels, np.arange(2)) <= 1e-11

    def test_half_everywhere_is_log_two(self):
        preds = np.full(5, 0.5)
        labels = np.array([0, 1, 0, 1, 1])
        assert ce_loss(preds, labels, np.arange(5)) == pytest.approx(np.log(2.0))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(5)
        preds = rng.uniform(0.01, 0.99, 25)
        labels = rng.integers(0, 2, 25)
        idx = np.arange(25)
        scalar = -np.mean([labels[i] * np.log(preds[i])
                           + (1 - labels[i]) * np.log(1 - preds[i]) for i in idx])
        assert ce_loss(preds, labels, idx) == pytest.approx(scalar, abs=1e-12)


class TestTraining:
    def test_gradient_matches_central_differences(self):
        # analytic grad vs step-1e-5 central differences, 20 random instances
        rng = np.random.default_rng(6)
        worst = 0.0
        for trial in range(20):
            g = generate_sbm(n=16, d_x=5, homophily=0.7, label_noise=0.1,
                             seed=trial, avg_degree=4.0)
            zf = aggregate(g)
            theta = rng.normal(size=5)
            _, grad, _, _ = _surrogate_loss_and_grad(
                theta, zf, g.labels, g.train_index, g.sensitive, 1.0, 0.1, 500)
            fd = np.zeros_like(theta)
            step = 1e-5
            for j in range(theta.size):
                tp, tm = theta.copy(), theta.copy()
                tp[j] += step
                tm[j] -= step
                lp = _surrogate_loss_and_grad(tp, zf, g.labels, g.train_index,
                                              g.sensitive, 1.0, 0.1, 500)[0]
                lm = _surrogate_loss_and_grad(tm, zf, g.labels, g.train_index,
                                              g.sensitive, 1.0, 0.1, 500)[0]
                fd[j] = (lp - lm) / (2 * step)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
        assert worst <= 1e-4

    def test_alpha_zero_fits_separable_data(self):
        # isolated nodes: Z = X, so the surrogate is plain logistic regression
        rng = np.random.default_rng(7)
        n = 60
        # classes at -3 / +3 along dim 0: separable through the origin (no bias term)
        signs = 2.0 * (np.arange(n) % 2) - 1.0
        x = rng.normal(size=(n, 2)) + np.array([3.0, 0.0]) * signs[:, None]
        labels = (np.arange(n) % 2).astype(int)
        sens = rng.integers(0, 2, n)
        sens[:2] = [0, 1]
        split = np.array([TRAIN] * (n - 4) + [TEST] * 4)
        sens[-4:] = [0, 0, 1, 1]
        g = make_graph(x, labels, np.ones(n, bool), sens, split, edges=[])
        model = SurrogateClassifier(alpha=0.0, grid_size=100, epochs=3000,
                                    learning_rate=0.05).fit(g)
        preds = model.predict(g)
        train_acc = np.mean(preds[g.train_index] == labels[g.train_index])
        assert train_acc >= 0.99

    def test_parity_weight_reduces_tv_on_fixture(self):
        g = generate_sbm(n=120, d_x=8, homophily=0.8, label_noise=0.05, seed=8)
        zf = aggregate(g)
        fair = SurrogateClassifier(alpha=1.0, grid_size=1000, epochs=800).fit(g)
        plain = SurrogateClassifier(alpha=0.0, grid_size=1000, epochs=800).fit(g)
        tv_fair = tv_loss(soft_predict(zf, fair.theta_), g.sensitive, 0.1, 1000)
        tv_plain = tv_loss(soft_predict(zf, plain.theta_), g.sensitive, 0.1, 1000)
        assert tv_fair < tv_plain

    def test_deterministic_given_seed(self):
        g = generate_sbm(n=40, d_x=4, homophily=0.7, label_noise=0.1, seed=9)
        a = SurrogateClassifier(epochs=100, grid_size=300, seed=3).fit(g)
        b = SurrogateClassifier(epochs=100, grid_size=300, seed=3).fit(g)
        np.testing.assert_array_equal(a.theta_, b.theta_)

    def test_divergence_aborts_with_diagnostic(self):
        from fairflip.surrogate import TrainingDivergedError
        g = generate_sbm(n=20, d_x=3, homophily=0.6, label_noise=0.1, seed=10)
        model = SurrogateClassifier(epochs=50, grid_size=100, learning_rate=np.nan)
        with pytest.raises(TrainingDivergedError):
            model.fit(g)

    def test_checkpoint_round_trip(self):
        g = generate_sbm(n=30, d_x=3, homophily=0.6, label_noise=0.1, seed=11)
        model = SurrogateClassifier(epochs=60, grid_size=200).fit(g)
        clone = SurrogateClassifier.from_checkpoint(model.to_checkpoint())
        np.testing.assert_allclose(clone.theta_, model.theta_)
        np.testing.assert_array_equal(clone.predict(g), model.predict(g))

    def test_warm_start_used_for_retraining(self):
        g = generate_sbm(n=30, d_x=3, homophily=0.6, label_noise=0.1, seed=12)
        base = SurrogateClassifier(epochs=100, grid_size=200).fit(g)
        warm = SurrogateClassifier(epochs=0, grid_size=200).fit(
            g, warm_start=base.theta_)
        np.testing.assert_array_equal(warm.theta_, base.theta_)


class TestEstimatorApi:
    def test_get_params_round_trip(self):
        model = SurrogateClassifier(alpha=0.5, bandwidth=0.2)
        params = model.get_params()
        assert params["alpha"] == 0.5
        clone = SurrogateClassifier(**params)
        assert clone.get_params() == params

    def test_unfitted_predict_raises(self):
        from sklearn.exceptions import NotFittedError
        g = generate_sbm(n=20, d_x=3, homophily=0.6, label_noise=0.1, seed=13)
        with pytest.raises(NotFittedError):
            SurrogateClassifier().predict(g)
