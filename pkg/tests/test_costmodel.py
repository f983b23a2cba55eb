import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlsf.costmodel import (
    CostModel,
    DensityTable,
    SafetyClassifier,
    closed_form_estimate,
    density_loss_grad_logits,
    estimation_bias,
    infer_cost,
    load_cost_model,
    mle_loss,
    save_cost_model,
    segment_safe_prob,
    surrogate_loss,
    train_classifier,
)
from rlsf.tabular import discounted_value, occupancy_measure, random_cmdp, random_policy
from rlsf.types import (
    InsufficientFeedbackError,
    Trajectory,
    Transition,
    UndefinedEstimateError,
    ValidationError,
)


class TestSegmentSafeProb:
    def test_all_safe(self):
        assert segment_safe_prob([1.0, 1.0, 1.0]) == 1.0

    def test_absorbing_zero(self):
        assert segment_safe_prob([0.9, 0.0, 0.7]) == 0.0

    def test_direct_product(self):
        assert segment_safe_prob([0.5, 0.5]) == pytest.approx(0.25, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            segment_safe_prob([0.5, 1.2])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            segment_safe_prob([])


class TestMleLoss:
    def test_single_safe_step(self):
        assert mle_loss([([0.5], 1)]) == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_single_unsafe_step(self):
        assert mle_loss([([0.5], 0)]) == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_two_step_unsafe_segment(self):
        assert mle_loss([([0.9, 0.9], 0)]) == pytest.approx(-math.log(0.19), abs=1e-12)
        assert mle_loss([([0.9, 0.9], 0)]) == pytest.approx(1.660731206821651, abs=1e-12)

    def test_product_one_with_unsafe_label_warns_and_clamps(self):
        with pytest.warns(UserWarning, match="clamping"):
            loss = mle_loss([([1.0, 1.0], 0)])
        assert loss == pytest.approx(-math.log(1e-12))


class TestSurrogateLoss:
    def test_perfect_prediction_near_zero(self):
        assert surrogate_loss([([1.0 - 1e-9], 1)]) == pytest.approx(0.0, abs=1e-8)

    def test_single_unsafe(self):
        assert surrogate_loss([([0.5], 0)]) == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_equals_mle_on_single_step_segments(self):
        rng = np.random.default_rng(8)
        batch = [([float(rng.uniform(0.01, 0.99))], int(rng.integers(0, 2))) for _ in range(100)]
        assert surrogate_loss(batch) == mle_loss(batch)

    def test_clamps_extreme_probabilities(self):
        assert np.isfinite(surrogate_loss([([0.0], 1)]))
        assert np.isfinite(surrogate_loss([([1.0], 0)]))

    @given(st.lists(
        st.tuples(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=50),
                  st.integers(0, 1)),
        min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_upper_bounds_mle(self, batch):
        assert surrogate_loss(batch) >= mle_loss(batch) - 1e-9

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
    @settings(max_examples=200, deadline=None)
    def test_product_lemma(self, xs):
        x = np.array(xs)
        assert 1.0 - np.prod(x) >= np.prod(1.0 - x) - 1e-12


class TestClosedForm:
    def test_simple_ratio(self):
        dens = DensityTable(d_g=np.array([[3.0]]), d_b=np.array([[1.0]]))
        assert closed_form_estimate(dens)[0, 0] == pytest.approx(0.75)

    def test_pure_unsafe_cell_is_zero(self):
        dens = DensityTable(d_g=np.array([[0.0]]), d_b=np.array([[5.0]]))
        assert closed_form_estimate(dens)[0, 0] == 0.0

    def test_zero_total_density_errors(self):
        dens = DensityTable(d_g=np.zeros((2, 2)), d_b=np.zeros((2, 2)))
        with pytest.raises(UndefinedEstimateError):
            closed_form_estimate(dens)

    def test_gradient_vanishes_at_closed_form(self):
        rng = np.random.default_rng(5)
        dens = DensityTable(d_g=rng.integers(0, 9, (4, 3)).astype(float) + 0.5,
                            d_b=rng.integers(0, 9, (4, 3)).astype(float) + 0.5)
        p_star = closed_form_estimate(dens)
        assert np.max(np.abs(density_loss_grad_logits(dens, p_star))) < 1e-9


def one_hot_dataset(rng, n_cells=6, p_unsafe=0.4, n=4000):
    """Cells with known safe probabilities -> labeled one-hot examples."""
    p_true = rng.uniform(0.05, 0.95, size=n_cells)
    cells = rng.integers(0, n_cells, size=n)
    labels = (rng.random(n) < p_true[cells]).astype(np.float64)
    X = np.eye(n_cells)[cells]
    d_g = np.array([labels[cells == c].sum() for c in range(n_cells)])
    d_b = np.array([(1 - labels)[cells == c].sum() for c in range(n_cells)])
    return X, labels, DensityTable(d_g=d_g[:, None], d_b=d_b[:, None])


class TestTrainClassifier:
    def test_linearly_separable_2d(self):
        rng = np.random.default_rng(0)
        n = 800
        X = rng.standard_normal((n, 2))
        y = (X @ np.array([1.5, -2.0]) + 0.3 > 0).astype(np.float64)
        clf = SafetyClassifier(obs_dim=2, hidden=[16], rng=rng, input_mode="state")
        train_classifier(clf, X, y, epochs=1500, batch_size=128, lr=5e-3, rng=rng)
        acc = float(((clf.p_safe(X) >= 0.5) == y).mean())
        assert acc >= 0.99

    def test_one_hot_matches_closed_form(self):
        rng = np.random.default_rng(1)
        X, labels, dens = one_hot_dataset(rng)
        p_star = closed_form_estimate(dens)[:, 0]
        clf = SafetyClassifier(obs_dim=X.shape[1], hidden=[], rng=rng, input_mode="state")
        # full-batch descent so the optimum is the closed form of the counts
        train_classifier(clf, X, labels, epochs=3000, batch_size=len(X), lr=0.02, rng=rng)
        p_hat = clf.p_safe(np.eye(X.shape[1]))
        assert np.max(np.abs(p_hat - p_star)) < 1e-2

    def test_single_class_buffer_saturates_with_warning(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((100, 3))
        y = np.ones(100)
        clf = SafetyClassifier(obs_dim=3, hidden=[8], rng=rng, input_mode="state")
        with pytest.warns(UserWarning, match="single class"):
            train_classifier(clf, X, y, epochs=800, batch_size=64, lr=5e-3, rng=rng)
        assert np.all(clf.p_safe(X) >= 0.5)

    def test_loss_trace_decreases_on_average(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((500, 4))
        y = (X[:, 0] > 0).astype(np.float64)
        clf = SafetyClassifier(obs_dim=4, hidden=[8], rng=rng, input_mode="state")
        history = train_classifier(clf, X, y, epochs=1000, batch_size=128, lr=5e-3, rng=rng)
        head = float(np.mean(history[:100]))
        tail = float(np.mean(history[-100:]))
        assert tail <= head

    def test_empty_buffer_rejected(self):
        rng = np.random.default_rng(4)
        clf = SafetyClassifier(obs_dim=2, hidden=[4], rng=rng, input_mode="state")
        with pytest.raises(ValidationError):
            train_classifier(clf, np.zeros((0, 2)), np.zeros(0))


def traj_from_states(states):
    transitions = [
        Transition(t=i, state=np.asarray(s, dtype=float), action=np.array([0.0]), reward=0.0)
        for i, s in enumerate(states)
    ]
    return Trajectory(transitions, traj_id="t")


class TestInferCost:
    def make_model(self, rng=None):
        rng = rng or np.random.default_rng(0)
        clf = SafetyClassifier(obs_dim=1, hidden=[], rng=rng, input_mode="state")
        return CostModel(classifier=clf)

    def test_threshold_strictness(self):
        model = self.make_model()
        # linear head p = sigmoid(w*x + b); pick params for exact probing
        model.classifier.mlp.set_flat(np.array([1.0, 0.0]))  # p = sigmoid(x)
        traj = traj_from_states([[-0.04], [0.04], [0.0]])
        costs = infer_cost(model, traj)
        # p(-0.04) < 0.5 -> cost 1; p(0.04) > 0.5 -> cost 0; p(0) = 0.5 -> cost 0
        np.testing.assert_array_equal(costs, [1.0, 0.0, 0.0])

    def test_p_exactly_half_maps_to_zero(self):
        model = self.make_model()
        model.classifier.mlp.set_flat(np.array([0.0, 0.0]))  # p = 0.5 everywhere
        costs = infer_cost(model, traj_from_states([[1.0], [2.0]]))
        np.testing.assert_array_equal(costs, [0.0, 0.0])

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(6)
        clf = SafetyClassifier(obs_dim=4, hidden=[], rng=rng, input_mode="state")
        model = CostModel(classifier=clf)
        with pytest.raises(ValidationError):
            infer_cost(model, traj_from_states([[0.1], [0.2]]))  # narrower than the mask


class TestEstimationBias:
    def test_no_mislabeling_gives_zero_bias(self):
        rng = np.random.default_rng(9)
        cmdp = random_cmdp(rng, 5, 3, gamma=0.9)
        d_g = np.where(cmdp.c_gt == 0, 5.0, 0.0)
        d_b = np.where(cmdp.c_gt == 0, 1.0, 4.0)
        pol = random_policy(rng, 5, 3)
        assert estimation_bias(cmdp, pol, DensityTable(d_g=d_g, d_b=d_b)) == 0.0

    def test_full_mislabeling_equals_safe_occupancy_mass(self):
        rng = np.random.default_rng(10)
        cmdp = random_cmdp(rng, 5, 3, gamma=0.9)
        d_g = np.where(cmdp.c_gt == 0, 1.0, 0.0)
        d_b = np.where(cmdp.c_gt == 0, 2.0, 4.0)  # every safe cell mislabeled
        pol = random_policy(rng, 5, 3)
        rho = occupancy_measure(cmdp, pol)
        expected = float(rho[cmdp.c_gt == 0].sum())
        assert estimation_bias(cmdp, pol, DensityTable(d_g=d_g, d_b=d_b)) == pytest.approx(expected, abs=1e-12)

    def test_identity_against_two_sided_exact_computation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cmdp = random_cmdp(rng, 5, 3, gamma=float(rng.uniform(0.5, 0.95)))
            d_g = rng.integers(0, 10, (5, 3)).astype(float)
            d_b = rng.integers(0, 10, (5, 3)).astype(float)
            unsafe = cmdp.c_gt == 1
            d_g[unsafe] = 0.0
            d_b[unsafe] = np.maximum(d_b[unsafe], 1.0)
            total_zero = (d_g + d_b) == 0
            d_g[total_zero] = 1.0
            dens = DensityTable(d_g=d_g, d_b=d_b)
            pol = random_policy(rng, 5, 3)
            c_star = (d_b > d_g).astype(float)
            direct = discounted_value(cmdp, pol, c_star) - discounted_value(cmdp, pol, cmdp.c_gt)
            assert estimation_bias(cmdp, pol, dens) == pytest.approx(direct, abs=1e-9)
            assert direct >= -1e-12

    def test_insufficient_coverage_errors(self):
        rng = np.random.default_rng(12)
        cmdp = random_cmdp(rng, 4, 2, gamma=0.9)
        dens = DensityTable(d_g=np.zeros((4, 2)), d_b=np.zeros((4, 2)))
        with pytest.raises(InsufficientFeedbackError):
            estimation_bias(cmdp, random_policy(rng, 4, 2), dens)


class TestPersistence:
    def test_save_load_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        clf = SafetyClassifier(obs_dim=6, hidden=[8, 4], rng=rng, input_mode="state")
        model = CostModel(classifier=clf)
        path = tmp_path / "model.cmk"
        save_cost_model(model, path)
        loaded = load_cost_model(path)
        np.testing.assert_array_equal(loaded.classifier.mlp.get_flat(), clf.mlp.get_flat())
        X = rng.standard_normal((1000, 6))
        np.testing.assert_array_equal(loaded.classifier.p_safe(X), clf.p_safe(X))

    def test_mask_makes_model_blind_to_telemetry(self):
        rng = np.random.default_rng(14)
        clf = SafetyClassifier(obs_dim=5, hidden=[6], rng=rng, input_mode="state",
                               feature_mask=[0, 1, 2])
        X = rng.standard_normal((50, 5))
        perturbed = X.copy()
        perturbed[:, 3:] += rng.standard_normal((50, 2)) * 10
        np.testing.assert_array_equal(clf.p_safe(X), clf.p_safe(perturbed))

    def test_transfer_to_wider_observation(self, tmp_path):
        """Position-only cost model detects the same unsafe set when the
        observation grows extra velocity features."""
        rng = np.random.default_rng(15)
        n_cells = 9
        unsafe = np.array([0, 0, 1, 0, 1, 0, 0, 0, 0], dtype=float)
        X = np.repeat(np.eye(n_cells), 40, axis=0)
        y = 1.0 - unsafe[np.argmax(X, axis=1)]
        clf = SafetyClassifier(obs_dim=n_cells, hidden=[], rng=rng, input_mode="state",
                               feature_mask=list(range(n_cells)))
        train_classifier(clf, clf.features(X), y, epochs=2500, batch_size=256, lr=0.05, rng=rng)
        path = tmp_path / "transfer.cmk"
        save_cost_model(CostModel(classifier=clf), path)

        loaded = load_cost_model(path)
        X_wide = np.hstack([np.eye(n_cells), rng.standard_normal((n_cells, 3))])
        feats = loaded.classifier.features(X_wide)
        costs = (loaded.classifier.p_safe(X_wide) < 0.5).astype(float)
        np.testing.assert_array_equal(costs, unsafe)
        assert feats.shape == (n_cells, n_cells)

    def test_incompatible_observation_rejected(self, tmp_path):
        rng = np.random.default_rng(16)
        clf = SafetyClassifier(obs_dim=4, hidden=[], rng=rng, input_mode="state",
                               feature_mask=[0, 1, 2, 3])
        path = tmp_path / "m.cmk"
        save_cost_model(CostModel(classifier=clf), path)
        loaded = load_cost_model(path)
        with pytest.raises(ValidationError):
            loaded.classifier.p_safe(np.zeros((2, 3)))  # obs narrower than mask
