import numpy as np
import pytest

from rankthick.data import split, standardize, synth_gaussian
from rankthick.explain import apply_postprocess, top_k
from rankthick.net import mlp_new
from rankthick.train import (
    TrainSpec,
    TrainingDivergedError,
    fast_at_step,
    linearized_worst_case,
    regularizer_value,
    regularizer_weight_grad,
    select_pairs,
    train,
)


def tiny_dataset(seed=0, n_features=6, n_samples=120, separation=3.0):
    ds = synth_gaussian(n_features, n_samples, separation, seed=seed, n_signal=3)
    split(ds, seed=seed)
    standardize(ds)
    return ds


class TestSelectPairs:
    def test_boundary_k2_kprime1(self):
        scores = np.array([9.0, 8.0, 1.1, 1.0])
        pairs = select_pairs(scores, 2, 1, mode="boundary")
        assert pairs == [(1, 2)]  # (rank 2, rank 3)

    def test_min_gap_picks_boundary_pair_first(self):
        scores = np.array([9.0, 8.0, 1.1, 1.0, 0.5, 0.2])
        pairs = select_pairs(scores, 2, 2, mode="min_gap")
        assert pairs[0] == (1, 2)

    def test_min_gap_distinct_and_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.normal(size=9)
            k, kp = 3, 3
            pairs = select_pairs(scores, k, kp, mode="min_gap")
            assert len({i for i, _ in pairs}) == kp
            assert len({j for _, j in pairs}) == kp
            order = top_k(scores, 9)
            cand_i = list(order[k - kp : k])
            cand_j = list(order[k : k + kp])
            expect = []
            while len(expect) < kp:
                best = min(
                    (scores[i] - scores[j], i, j) for i in cand_i for j in cand_j
                )
                expect.append((best[1], best[2]))
                cand_i.remove(best[1])
                cand_j.remove(best[2])
            assert pairs == expect

    def test_kprime_too_large(self):
        with pytest.raises(ValueError):
            select_pairs(np.arange(6.0), 2, 3)


class TestRegularizerValue:
    def test_zero_lambdas_zero_value(self):
        m = mlp_new([6, 4, 1], activation="softplus", seed=0)
        spec = TrainSpec(method="r2et", lambda1=0.0, lambda2=0.0, k=2)
        x = np.random.default_rng(0).normal(size=6)
        assert regularizer_value(m, x, spec) == 0.0

    def test_methods_without_regularizer_rejected(self):
        m = mlp_new([4, 3, 1], seed=0)
        for method in ("vanilla", "wd", "sp", "at"):
            spec = TrainSpec(method=method, k=2)
            with pytest.raises(ValueError):
                regularizer_value(m, np.zeros(4), spec)

    def test_full_pair_gap_matches_bruteforce(self):
        m = mlp_new([6, 4, 1], activation="softplus", seed=3)
        x = np.random.default_rng(1).normal(size=6)
        spec = TrainSpec(method="r2et_noH", lambda1=2.0, k=2)
        got = regularizer_value(m, x, spec)
        c = m.predicted_class(x)
        s = np.abs(m.grad_input(x, c))
        order = top_k(s, 6)
        brute = -2.0 * sum(
            s[i] - s[j] for i in order[:2] for j in order[2:]
        )
        assert got == pytest.approx(brute, rel=1e-12)

    def test_esth_on_quadratic_fixture(self):
        # f with constant Hessian A: penalty equals ||A v||_2 exactly.
        class Quad:
            def __init__(self, a):
                self.a = a
                self.n_inputs = a.shape[0]

            def predicted_class(self, x):
                return 1

            def grad_input(self, x, c, of="prob"):
                return self.a @ np.asarray(x, dtype=float) + np.array([1.0, 2.0, 3.0])

            def hvp_fd(self, x, c, v, kappa):
                from rankthick.net import hvp_fd

                return hvp_fd(self, x, c, v, kappa)

        a = np.array([[0.5, 0.1, 0.0], [0.1, 0.8, -0.2], [0.0, -0.2, 0.3]])
        model = Quad(a)
        spec = TrainSpec(method="est_h", lambda2=1.0, kappa=1e-3, k=1)
        x = np.zeros(3)
        got = regularizer_value(model, x, spec)
        g = model.grad_input(x, 1)
        v = np.sign(g) / np.linalg.norm(np.sign(g))
        assert got == pytest.approx(np.linalg.norm(a @ v), rel=1e-9)


class TestRegularizerWeightGrad:
    def _double_fd(self, m, x, spec, step=1e-6):
        """Oracle: perturb each weight, recompute the regularizer value."""
        out = []
        for li, (w, b) in enumerate(m.weights):
            gw = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                orig = w[idx]
                w[idx] = orig + step
                vp = regularizer_value(m, x, spec)
                w[idx] = orig - step
                vm = regularizer_value(m, x, spec)
                w[idx] = orig
                gw[idx] = (vp - vm) / (2 * step)
            gb = np.zeros_like(b)
            for idx in np.ndindex(b.shape):
                orig = b[idx]
                b[idx] = orig + step
                vp = regularizer_value(m, x, spec)
                b[idx] = orig - step
                vm = regularizer_value(m, x, spec)
                b[idx] = orig
                gb[idx] = (vp - vm) / (2 * step)
            out.append((gw, gb))
        return out

    @pytest.mark.parametrize(
        "method,l1,l2",
        [
            ("r2et_noH", 1.0, 0.0),
            ("r2et", 1.0, 0.5),
            ("est_h", 0.0, 1.0),
            ("r2et_mm", 1.0, 0.5),
        ],
    )
    def test_matches_double_fd_oracle(self, method, l1, l2):
        m = mlp_new([2, 3, 1], activation="softplus", seed=7)
        rng = np.random.default_rng(11)
        for w, b in m.weights:
            b += rng.normal(size=b.shape) * 0.2
        x = np.array([0.7, -0.4])
        spec = TrainSpec(
            method=method, lambda1=l1, lambda2=l2, kappa=1e-4, k=1, kprime=1
        )
        got = regularizer_weight_grad(m, x, spec)
        oracle = self._double_fd(m, x, spec)
        for (gw, gb), (ow, ob) in zip(got.layers, oracle):
            scale = max(np.max(np.abs(ow)), np.max(np.abs(ob)), 1e-4)
            assert np.max(np.abs(gw - ow)) / scale < 2e-2
            assert np.max(np.abs(gb - ob)) / scale < 2e-2

    def test_exponential_gap_matches_double_fd(self):
        m = mlp_new([3, 3, 1], activation="softplus", seed=9)
        x = np.array([0.5, -0.3, 0.8])
        spec = TrainSpec(
            method="r2et_noH", lambda1=1.0, gap_form="exponential", k=1, kprime=1,
            kappa=1e-4,
        )
        got = regularizer_weight_grad(m, x, spec)
        oracle = self._double_fd(m, x, spec)
        for (gw, _), (ow, _) in zip(got.layers, oracle):
            scale = max(np.max(np.abs(ow)), 1e-4)
            assert np.max(np.abs(gw - ow)) / scale < 2e-2

    def test_lambda_scaling_linearity(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=4)
        x = np.random.default_rng(3).normal(size=4)
        g1 = regularizer_weight_grad(m, x, TrainSpec(method="r2et_noH", lambda1=1.0, k=2))
        g2 = regularizer_weight_grad(m, x, TrainSpec(method="r2et_noH", lambda1=2.0, k=2))
        for (a, _), (b, _) in zip(g1.layers, g2.layers):
            np.testing.assert_allclose(2 * a, b, rtol=1e-12)

    def test_zero_lambdas_zero_grad(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=4)
        g = regularizer_weight_grad(
            m, np.zeros(4), TrainSpec(method="r2et", lambda1=0.0, lambda2=0.0, k=2)
        )
        assert g.norm() == 0.0


class TestFastAtStep:
    def test_zero_gradient_no_move(self):
        m = mlp_new([4, 3, 1], activation="softplus", seed=0)
        for w, b in m.weights:
            w[:] = 0.0
        x = np.array([0.5, 0.2, -0.1, 0.3])
        np.testing.assert_array_equal(fast_at_step(m, x, 2, 0.1), x)

    def test_budget_respected(self):
        m = mlp_new([5, 4, 1], activation="softplus", seed=2)
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.normal(size=5)
            xp = fast_at_step(m, x, 2, 0.1)
            assert np.linalg.norm(xp - x) <= 0.1 + 1e-12

    def test_decreases_gap_sum(self):
        m = mlp_new([5, 4, 1], activation="softplus", seed=3)
        rng = np.random.default_rng(7)
        wins = 0
        for _ in range(20):
            x = rng.normal(size=5)
            c = m.predicted_class(x)
            s0 = apply_postprocess(m.grad_input(x, c), "abs")
            order = top_k(s0, 5)
            pairs = [(i, j) for i in order[:2] for j in order[2:]]
            xp = fast_at_step(m, x, 2, 0.01)
            s1 = apply_postprocess(m.grad_input(xp, c), "abs")
            before = sum(s0[i] - s0[j] for i, j in pairs)
            after = sum(s1[i] - s1[j] for i, j in pairs)
            wins += int(after < before)
        assert wins >= 18

    def test_eps_must_be_positive(self):
        m = mlp_new([4, 3, 1], seed=0)
        with pytest.raises(ValueError):
            fast_at_step(m, np.zeros(4), 2, 0.0)


class TestLinearizedWorstCase:
    def test_identity_between_formula_and_corner_minima(self):
        rng = np.random.default_rng(13)
        for trial in range(20):
            m = mlp_new([6, 4, 1], activation="softplus", seed=trial)
            x = rng.normal(size=6)
            nu, per_feature = linearized_worst_case(m, x, 2, eps=0.1)
            assert nu == pytest.approx(np.min(per_feature), abs=1e-8)

    def test_lower_bounds_random_corner_search(self):
        rng = np.random.default_rng(17)
        for trial in range(5):
            m = mlp_new([5, 4, 1], activation="softplus", seed=40 + trial)
            x = rng.normal(size=5)
            eps = 0.2
            c = m.predicted_class(x)
            raw = m.grad_input(x, c)
            h = m.hessian_input(x, c)
            nu, _ = linearized_worst_case(m, x, 2, eps)
            order = top_k(raw, 5)
            l_vec = np.full(5, -1.0)
            l_vec[order[:2]] = 1.0
            base = float(l_vec @ raw)
            n_draws = 20_000
            ts = rng.integers(0, 5, size=n_draws)
            dirs = rng.normal(size=(n_draws, 5))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            radii = eps * rng.uniform(size=(n_draws, 1)) ** (1 / 5)
            deltas = dirs * radii
            vals = base + l_vec[ts] * np.einsum("ij,ij->i", deltas, h[ts])
            assert nu <= np.min(vals) + 1e-12


class TestTrain:
    def test_vanilla_reaches_good_auc(self):
        ds = tiny_dataset(seed=1)
        spec = TrainSpec(method="vanilla", k=2, max_epochs=120, lr=0.05,
                         patk_every=40, patk_iters=10, patk_samples=8)
        out = train(spec, ds)
        assert out.val_auc >= 0.95

    def test_r2et_zero_lambdas_bitwise_vanilla(self):
        ds = tiny_dataset(seed=2)
        base = dict(k=2, max_epochs=15, lr=0.05, patk_every=5, patk_iters=5,
                    patk_samples=4, early_stop_patience=0)
        v = train(TrainSpec(method="vanilla", **base), ds)
        r = train(TrainSpec(method="r2et", lambda1=0.0, lambda2=0.0, **base), ds)
        for (w1, b1), (w2, b2) in zip(v.model.weights, r.model.weights):
            assert w1.tobytes() == w2.tobytes()
            assert b1.tobytes() == b2.tobytes()

    def test_deterministic_checkpoints(self):
        ds = tiny_dataset(seed=3)
        spec = TrainSpec(method="r2et", lambda1=0.1, lambda2=0.1, k=2,
                         max_epochs=10, lr=0.05, patk_every=5, patk_iters=5,
                         patk_samples=4, early_stop_patience=0)
        a = train(spec, ds)
        b = train(spec, ds)
        for (w1, _), (w2, _) in zip(a.model.weights, b.model.weights):
            assert w1.tobytes() == w2.tobytes()
        assert a.best_epoch == b.best_epoch

    def test_sp_method_uses_softplus(self):
        ds = tiny_dataset(seed=4)
        spec = TrainSpec(method="sp", rho=2.0, k=2, max_epochs=8, lr=0.05,
                         patk_every=4, patk_iters=5, patk_samples=4,
                         early_stop_patience=0)
        out = train(spec, ds)
        assert out.model.activation == "softplus"
        assert out.model.activation_param == 2.0

    def test_retrain_from_checkpoint(self, tmp_path):
        from rankthick.net import save_checkpoint

        ds = tiny_dataset(seed=5)
        base = train(
            TrainSpec(method="vanilla", k=2, max_epochs=20, lr=0.05,
                      patk_every=10, patk_iters=5, patk_samples=4,
                      early_stop_patience=0),
            ds,
        )
        ckpt = tmp_path / "vanilla.json"
        save_checkpoint(base.model, ckpt)
        spec = TrainSpec(method="r2et_noH", lambda1=0.5, k=2, max_epochs=5,
                         lr=0.02, patk_every=5, patk_iters=5, patk_samples=4,
                         retrain_from=str(ckpt), early_stop_patience=0)
        out = train(spec, ds)
        assert out.best_epoch <= 5

    def test_divergence_detected(self):
        ds = tiny_dataset(seed=6)
        spec = TrainSpec(method="vanilla", k=2, max_epochs=60, lr=1e9,
                         patk_every=60, patk_iters=5, patk_samples=2,
                         early_stop_patience=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError):
                train(spec, ds)

    def test_at_training_runs(self):
        ds = tiny_dataset(seed=7)
        spec = TrainSpec(method="at", eps_at=0.05, k=2, max_epochs=6, lr=0.05,
                         patk_every=3, patk_iters=5, patk_samples=4,
                         early_stop_patience=0)
        out = train(spec, ds)
        assert np.isfinite(out.val_auc)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            TrainSpec(method="bogus")
        with pytest.raises(ValueError):
            TrainSpec(lambda1=-1.0)
        with pytest.raises(ValueError):
            TrainSpec(kprime=9, k=8)
