"""Head-trainer tests: loss values, gradient checks, convergence, determinism."""

import math

import numpy as np
import pytest

import oracles
from helpers import assert_close_rel, make_image_tree
from driverwatch import data as D
from driverwatch import graph as G
from driverwatch import tensor as T
from driverwatch import trainer as TR
from driverwatch.tensor import Tensor
from driverwatch.trainer import EpochRecord, TrainConfig, TrainingDivergedError


def separable_features(n_per_class=8, num_classes=10, dims=20, pad_to=1280, seed=0,
                       spread=8.0, noise=0.3):
    """Two adjacent Gaussian blobs per class around well-separated class means.

    Class c's mean is spread * e_{2c}; its two blobs sit at +-1 along
    e_{2c+1}. Separability is certified by a closed-form linear classifier
    (one-vs-all least squares) reaching 100% on the same data, independent
    of the SGD path under test.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(num_classes):
        mean = np.zeros(dims)
        mean[2 * c] = spread
        for offset in (-1.0, 1.0):
            blob_mean = mean.copy()
            blob_mean[2 * c + 1] = offset
            pts = blob_mean + rng.standard_normal((n_per_class, dims)) * noise
            xs.append(pts)
            ys.extend([c] * n_per_class)
    x = np.concatenate(xs).astype(np.float32)
    x = np.hstack([x, np.zeros((len(x), pad_to - dims), dtype=np.float32)])
    y = np.array(ys, dtype=np.int64)

    # closed-form oracle: least-squares fit to one-hot targets
    targets = np.eye(num_classes)[y]
    design = np.hstack([x[:, : 2 * num_classes].astype(np.float64), np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    assert ((design @ coef).argmax(axis=1) == y).all(), "fixture not separable; rebuild it"
    return x, y


class TestCrossEntropy:
    def test_uniform_logits_is_log_k(self):
        assert TR.cross_entropy(np.zeros(10), 3) == pytest.approx(math.log(10), abs=1e-9)
        assert TR.cross_entropy(np.zeros(10), 3) == pytest.approx(2.302585, abs=1e-6)

    def test_confident_correct_limit(self):
        # two-class margin of 10: loss = log(1 + e^-10) < 1e-4
        assert TR.cross_entropy(np.array([10.0, 0.0]), 0) < 1e-4
        # and the limit continues to 0 as the margin grows
        wide = np.zeros(10)
        wide[2] = 40.0
        assert TR.cross_entropy(wide, 2) < 1e-12

    def test_value_from_softmax_example(self):
        loss = TR.cross_entropy(np.array([2.0, 1.0, 0.0]), 1)
        assert loss == pytest.approx(-math.log(0.244728), abs=1e-5)
        assert loss == pytest.approx(1.407606, abs=1e-5)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.standard_normal(7)
            c = float(rng.uniform(-100, 100))
            assert abs(TR.cross_entropy(z + c, 4) - TR.cross_entropy(z, 4)) <= 1e-6

    def test_loss_is_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            z = rng.standard_normal(5) * 10
            assert TR.cross_entropy(z, int(rng.integers(0, 5))) >= 0.0

    def test_out_of_range_class(self):
        with pytest.raises(IndexError):
            TR.cross_entropy(np.zeros(4), 4)


class TestGradHead:
    def test_zero_gradient_at_optimum(self):
        # features orthogonal one-hot, weight scaled so softmax ~ exact one-hot
        features = np.zeros(6, dtype=np.float32)
        features[0] = 1.0
        weight = np.zeros((3, 6), dtype=np.float32)
        weight[1, 0] = 80.0  # p(true) = 1 to float precision
        bias = np.zeros(3, dtype=np.float32)
        dw, db = TR.grad_head(features, weight, bias, 1)
        assert np.abs(dw).max() < 1e-6
        assert np.abs(db).max() < 1e-6

    def test_dlogits_rows_sum_to_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            f = rng.standard_normal(8).astype(np.float32)
            w = rng.standard_normal((5, 8)).astype(np.float32)
            b = rng.standard_normal(5).astype(np.float32)
            _, db = TR.grad_head(f, w, b, int(rng.integers(0, 5)))
            assert abs(db.sum()) <= 1e-6  # db equals dL/dlogits for one sample

    def test_matches_finite_differences_100_instances(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for i in range(100):
            k = int(rng.integers(3, 8))
            d = int(rng.integers(4, 13))
            f = rng.standard_normal(d).astype(np.float32)
            w = (rng.standard_normal((k, d)) * 0.5).astype(np.float32)
            b = (rng.standard_normal(k) * 0.5).astype(np.float32)
            y = int(rng.integers(0, k))
            l2 = 0.01 if i % 4 == 0 else 0.0
            dw, db = TR.grad_head(f, w, b, y, l2=l2)
            fdw, fdb = oracles.fd_grad_head(f, w, b, y, l2=l2, h=1e-3)
            num = np.abs(np.concatenate([dw.ravel() - fdw.ravel(), db - fdb]))
            den = np.maximum.reduce([
                np.abs(np.concatenate([fdw.ravel(), fdb])),
                np.abs(np.concatenate([dw.ravel(), db])),
                np.full(num.shape, 1e-3),
            ])
            worst = max(worst, float((num / den).max()))
        assert worst <= 1e-3, f"max relative error {worst:.2e}"

    def test_batch_gradient_is_mean_of_singles(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal((6, 10)).astype(np.float32)
        w = rng.standard_normal((4, 10)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = rng.integers(0, 4, size=6)
        dw_batch, db_batch = TR.grad_head(f, w, b, y)
        singles = [TR.grad_head(f[i], w, b, int(y[i])) for i in range(6)]
        dw_mean = np.mean([s[0] for s in singles], axis=0)
        db_mean = np.mean([s[1] for s in singles], axis=0)
        assert np.abs(dw_batch - dw_mean).max() <= 1e-6
        assert np.abs(db_batch - db_mean).max() <= 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            TR.grad_head(np.zeros(5), np.zeros((3, 4)), np.zeros(3), 0)


class TestSgdStep:
    def test_zero_gradient_leaves_theta(self):
        theta = np.array([1.0, 2.0], dtype=np.float32)
        out = TR.sgd_step(theta, np.zeros(2, dtype=np.float32), 0.5)
        assert np.array_equal(out, theta)

    def test_hand_computed_step(self):
        out = TR.sgd_step(np.array([1.0], dtype=np.float32),
                          np.array([2.0], dtype=np.float32), 0.5)
        assert out[0] == 0.0

    def test_displacement_linear_in_lr(self):
        # power-of-two values keep float32 arithmetic exact, so linearity
        # of the displacement in lr is observable bit-for-bit
        rng = np.random.default_rng(5)
        theta = rng.integers(-8, 9, size=16).astype(np.float32)
        grad = rng.integers(-8, 9, size=16).astype(np.float32)
        d1 = theta - TR.sgd_step(theta, grad, 0.25)
        d2 = theta - TR.sgd_step(theta, grad, 0.5)
        assert np.array_equal(d2, d1 * 2.0)
        assert np.array_equal(d1, 0.25 * grad)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            TR.sgd_step(np.zeros(3), np.zeros(4), 0.1)


class TestFitHead:
    def test_reaches_100_percent_on_separable_set_within_50_epochs(self):
        x, y = separable_features()
        config = TrainConfig(lr=0.1, epochs=50, batch_size=16, seed=0)
        weight, bias, records = TR.fit_head(x, y, x, y, config, 10)
        preds = (x @ weight.T + bias).argmax(axis=1)
        assert (preds == y).mean() == 1.0
        assert records[-1].top1 == 1.0

    def test_full_batch_loss_non_increasing_at_small_lr(self):
        x, y = separable_features(seed=1)
        config = TrainConfig(lr=1e-3, epochs=10, batch_size=len(x), seed=0)
        _, _, records = TR.fit_head(x, y, x, y, config, 10)
        losses = [r.train_loss for r in records]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_zero_lr_is_a_no_op(self):
        x, y = separable_features(seed=2, n_per_class=4)
        config = TrainConfig(lr=0.0, epochs=3, batch_size=len(x), seed=0)
        weight, bias, records = TR.fit_head(x, y, x, y, config, 10)
        assert np.array_equal(weight, np.zeros_like(weight))
        assert np.array_equal(bias, np.zeros_like(bias))
        assert len({r.train_loss for r in records}) == 1
        assert records[0].train_loss == pytest.approx(math.log(10), abs=1e-6)

    def test_same_seed_bit_identical_records(self):
        x, y = separable_features(seed=3, n_per_class=4)
        config = TrainConfig(lr=0.05, epochs=6, batch_size=8, seed=11)
        _, _, a = TR.fit_head(x, y, x, y, config, 10)
        _, _, b = TR.fit_head(x, y, x, y, config, 10)
        assert a == b

    def test_nan_loss_aborts_with_diagnostic(self):
        # lr large enough to overflow float32 logits -> inf - inf -> NaN loss
        x, y = separable_features(seed=4, n_per_class=4)
        config = TrainConfig(lr=1e30, epochs=10, batch_size=8, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="lr"):
                TR.fit_head(x * 1e6, y, x, y, config, 10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-0.1, epochs=1, batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.1, epochs=0, batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.1, epochs=1, batch_size=1, l2=-1.0)


class TestFeatureExtraction:
    def test_zero_weight_backbone_gives_zero_features(self, mini_model):
        bound = mini_model.bind(G.random_weight_store(mini_model, seed=0, init="zeros"))
        x = Tensor(np.random.default_rng(0).random((1, 3, 32, 32), dtype=np.float32))
        feats = TR.extract_features(bound, x)
        assert feats.shape == (1, mini_model.feature_dim)
        assert np.array_equal(feats, np.zeros_like(feats))

    def test_fixed_weights_fixed_image_deterministic(self, mini_bound):
        x = Tensor(np.random.default_rng(1).random((1, 3, 32, 32), dtype=np.float32))
        a = TR.extract_features(mini_bound, x)
        b = TR.extract_features(mini_bound, x)
        assert np.array_equal(a, b)

    def test_mini_backbone_matches_op_composition(self, mini_bound):
        x = Tensor(np.random.default_rng(2).random((1, 3, 32, 32), dtype=np.float32))
        feats = TR.extract_features(mini_bound, x)
        # straight-line composition using the same bound stages minus the linear
        y = x
        for stage in mini_bound._exec[:-1]:
            y = stage(y)
        expect = T.global_avg_pool(mini_bound._exec[-1].conv(y)).data.reshape(1, -1)
        assert_close_rel(feats, expect, 1e-4)

    def test_cache_round_trip_and_reuse(self, tmp_path, mini_bound):
        root = make_image_tree(tmp_path / "imgs", per_class=1)
        samples = list(D.scan(root).samples)[:5]
        cache = tmp_path / "cache"
        x1, y1 = TR.extract_features_cached(mini_bound, samples, cache_dir=cache)
        n_files = len(list(cache.rglob("*.npy")))
        assert n_files == 5
        x2, y2 = TR.extract_features_cached(mini_bound, samples, cache_dir=cache)
        assert np.array_equal(x1, x2)
        assert np.array_equal(y1, y2)
        assert len(list(cache.rglob("*.npy"))) == n_files


class TestEpochCsv:
    def test_csv_format(self, tmp_path):
        records = [EpochRecord(1, 2.0, 2.1, 0.5, 0.9), EpochRecord(2, 1.0, 1.2, 0.7, 1.0)]
        path = tmp_path / "epochs.csv"
        TR.write_epoch_csv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,top1,top5"
        assert lines[1].startswith("1,2.0,2.1,0.5,0.9")
        assert len(lines) == 3
