import numpy as np
import pytest

from helpers import pearson_textbook
from rankthick.attack import AttackConfig, er_attack
from rankthick.evaluate import (
    auc,
    comp,
    correlation,
    dffot,
    manipulation_epoch,
    model_auc,
    precision_at_k,
    sensitivity,
    suff,
)
from rankthick.net import mlp_new


class TestPrecisionAtK:
    def test_identical_maps(self):
        s = np.array([0.4, 0.1, 0.9])
        assert precision_at_k(s, s, 2) == 1.0

    def test_disjoint_top1(self):
        assert precision_at_k(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1) == 0.0

    def test_half_overlap(self):
        a = np.array([4.0, 3.0, 2.0, 1.0])
        b = np.array([4.0, 1.0, 3.0, 2.0])
        assert precision_at_k(a, b, 2) == 0.5

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.normal(size=(2, 10))
            assert precision_at_k(a, b, 4) == precision_at_k(b, a, 4)

    def test_one_iff_equal_topk_sets(self):
        rng = np.random.default_rng(5)
        from rankthick.explain import top_k

        for _ in range(200):
            a, b = rng.normal(size=(2, 8))
            same = set(top_k(a, 3)) == set(top_k(b, 3))
            assert (precision_at_k(a, b, 3) == 1.0) == same

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            precision_at_k(np.ones(3), np.ones(4), 2)


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_constant_score_half(self):
        assert auc([0.5] * 10, [0, 1] * 5) == 0.5

    def test_matches_pairwise_bruteforce(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(size=50)
        scores[10:20] = scores[0:10]  # inject ties across classes
        labels = rng.integers(0, 2, size=50)
        if labels.sum() in (0, 50):
            labels[0] = 1 - labels[0]
        got = auc(scores, labels)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
        assert got == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)

    def test_monotone_transform_invariant(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) == pytest.approx(
            auc(np.exp(2 * scores), labels), abs=1e-12
        )

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [1, 1])


class TestSensitivity:
    def test_unchanged_inputs(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=0)
        X = np.random.default_rng(0).normal(size=(10, 4))
        assert sensitivity(m, X, X) == 0.0

    def test_all_flipped(self):
        m = mlp_new([2, 1], seed=0)
        w = m.weights[0][0]
        w[:] = np.array([[5.0, 0.0]])
        X = np.full((5, 2), 2.0)
        assert sensitivity(m, X, -X) == 1.0

    def test_matches_argmax_oracle(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=3)
        rng = np.random.default_rng(11)
        A = rng.normal(size=(100, 4)) * 2
        B = A + rng.normal(size=(100, 4))
        got = sensitivity(m, A, B)
        flips = sum(
            int(np.argmax(m.prob_vector(a)) != np.argmax(m.prob_vector(b)))
            for a, b in zip(A, B)
        )
        assert got == pytest.approx(flips / 100)

    def test_length_mismatch(self):
        m = mlp_new([2, 1], seed=0)
        with pytest.raises(ValueError):
            sensitivity(m, np.zeros((3, 2)), np.zeros((2, 2)))


class TestFaithfulness:
    def test_model_ignoring_features_never_flips(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=0)
        for w, b in m.weights:
            w[:] = 0.0
        m.weights[1][1][:] = 1.0  # constant positive logit
        x = np.array([0.5, -0.3, 0.2, 0.9])
        s = np.array([0.4, 0.3, 0.2, 0.1])
        assert dffot(m, x, s) == 1.0
        assert comp(m, x, s) == pytest.approx(0.0, abs=1e-12)
        assert suff(m, x, s) == pytest.approx(0.0, abs=1e-12)

    def test_single_decisive_feature(self):
        m = mlp_new([4, 1], seed=0)
        m.weights[0][0][:] = np.array([[10.0, 0.0, 0.0, 0.0]])
        x = np.array([1.0, 0.2, 0.2, 0.2])
        s = np.array([5.0, 0.1, 0.05, 0.01])
        assert dffot(m, x, s) == pytest.approx(1 / 4)

    def test_comp_bounded(self):
        m = mlp_new([5, 4, 1], activation="softplus", seed=2)
        rng = np.random.default_rng(13)
        for _ in range(20):
            x = rng.normal(size=5)
            s = rng.uniform(size=5)
            v = comp(m, x, s)
            assert 0.0 <= v <= 1.0

    def test_matches_masking_oracle(self):
        m = mlp_new([8, 5, 1], activation="softplus", seed=4)
        rng = np.random.default_rng(17)
        x = rng.normal(size=8)
        s = rng.uniform(size=8)
        from rankthick.explain import top_k

        order = top_k(s, 8)
        c0 = m.predicted_class(x)
        base = m.prob_vector(x)[c0]
        comp_vals, suff_vals = [], []
        for kk in range(1, 9):
            xm = x.copy()
            xm[order[:kk]] = 0.0
            comp_vals.append(abs(base - m.prob_vector(xm)[c0]))
            xk = np.zeros(8)
            xk[order[:kk]] = x[order[:kk]]
            suff_vals.append(abs(base - m.prob_vector(xk)[c0]))
        assert comp(m, x, s) == pytest.approx(np.mean(comp_vals), abs=1e-12)
        assert suff(m, x, s) == pytest.approx(np.mean(suff_vals), abs=1e-12)

    def test_dffot_times_n_integral(self):
        m = mlp_new([6, 4, 1], activation="softplus", seed=5)
        rng = np.random.default_rng(19)
        for _ in range(20):
            x = rng.normal(size=6) * 2
            s = rng.uniform(size=6)
            v = dffot(m, x, s)
            assert v == 1.0 or abs(v * 6 - round(v * 6)) < 1e-12

    def test_mean_masking_option(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=6)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        s = np.array([0.4, 0.3, 0.2, 0.1])
        mask = np.array([0.5, 0.5, 0.5, 0.5])
        assert comp(m, x, s, mask_value=mask) >= 0.0


class TestManipulationEpoch:
    def _trace(self, seed=0):
        m = mlp_new([6, 4, 1], activation="softplus", seed=seed)
        x = np.random.default_rng(seed).normal(size=6)
        return er_attack(m, x, 2, AttackConfig(step_size=0.02, max_iters=50, epsilon=1.0))

    def test_no_flip_returns_none(self):
        m = mlp_new([6, 4, 1], activation="softplus", seed=1)
        w1 = m.weights[0][0]
        w1 *= 0.0
        w1[:, 0] = 3.0
        x = np.ones(6)
        trace = er_attack(m, x, 1, AttackConfig(step_size=1e-5, max_iters=3, epsilon=1e-4))
        assert manipulation_epoch(trace, "first_flip") is None

    def test_matches_recorded_first_flip(self):
        for seed in range(6):
            trace = self._trace(seed)
            assert manipulation_epoch(trace, "first_flip") == trace.first_flip_iter

    def test_patk_threshold_mode(self):
        trace = self._trace(2)
        epoch = manipulation_epoch(trace, "patk_below", theta=1.01)
        assert epoch == 0  # any P@k < 1.01 matches the very first record

    def test_rescan_consistency(self):
        trace = self._trace(3)
        epoch = manipulation_epoch(trace, "patk_below", theta=0.6)
        oracle = None
        for rec in trace.records:
            if rec.patk < 0.6:
                oracle = rec.it
                break
        assert epoch == oracle


class TestCorrelation:
    def test_perfect_linear(self):
        xs = np.arange(10.0)
        assert correlation(xs, 2 * xs) == pytest.approx(1.0)

    def test_perfect_negative(self):
        xs = np.arange(5.0)
        assert correlation(xs, -xs) == pytest.approx(-1.0)

    def test_matches_textbook_formula(self):
        rng = np.random.default_rng(23)
        xs, ys = rng.normal(size=(2, 40))
        assert correlation(xs, ys) == pytest.approx(pearson_textbook(xs, ys), abs=1e-12)

    def test_spearman_rank_based(self):
        xs = np.array([1.0, 2.0, 3.0, 4.0])
        ys = np.exp(xs)  # monotone
        assert correlation(xs, ys, method="spearman") == pytest.approx(1.0)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            correlation([1.0, 2.0], [1.0, 2.0])


def test_model_auc_on_separable_data():
    m = mlp_new([2, 1], seed=0)
    m.weights[0][0][:] = np.array([[4.0, 0.0]])
    X = np.array([[-2.0, 0.0], [-1.5, 0.0], [1.5, 0.0], [2.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    assert model_auc(m, X, y) == 1.0
