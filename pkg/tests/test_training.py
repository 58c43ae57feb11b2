"""Schedule, optimizer, patch sampling and the epoch loop."""

import numpy as np
import pytest

from srnet.data import DataError
from srnet.model import ModelConfig, build_network
from srnet.tensor import Tensor
from srnet.training import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    evaluate,
    lr_at,
    sample_patches,
    train,
)


def tiny_config(**kw):
    base = dict(stem_width=8, rdab_convs=1, rdab_growth=4, scales=2,
                dense_layers=1, dense_growth=4, reduction=2, out_bands=4)
    base.update(kw)
    return ModelConfig(**base)


def tiny_pairs(count=3, bands=4, size=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        cube = rng.uniform(0.1, 0.9, size=(bands, size, size)).astype(np.float32)
        rgb = rng.uniform(0, 1, size=(3, size, size)).astype(np.float32)
        out.append((rgb, cube))
    return out


class TestSchedule:
    def test_endpoints_are_exact(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 1e-3
        assert lr_at(cfg.epochs, cfg) == 1e-5

    def test_midpoint_is_geometric_mean(self):
        cfg = TrainConfig(epochs=500)
        assert lr_at(250, cfg) == pytest.approx(1e-4, rel=1e-12)

    def test_monotone_decreasing(self):
        cfg = TrainConfig(epochs=40, lr_start=1e-2, lr_end=1e-4)
        values = [lr_at(e, cfg) for e in range(41)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        cfg = TrainConfig(epochs=10)
        with pytest.raises(TrainingError):
            lr_at(-1, cfg)
        with pytest.raises(TrainingError):
            lr_at(11, cfg)


class TestAdam:
    def test_first_step_moves_by_almost_lr(self):
        # bias correction makes m_hat = g and v_hat = g*g on step one, so the
        # update is lr * g / (|g| + eps)
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float64), requires_grad=True)
        w.grad = np.full((1, 1, 1, 1), 1.0)
        adam_step({"w": w}, AdamState(), lr=1e-3)
        expect = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8))
        assert w.data.ravel()[0] == pytest.approx(expect, rel=1e-15)

    def test_three_steps_match_reference_recurrence(self):
        rng = np.random.default_rng(0)
        w0 = rng.uniform(-1, 1, size=(1, 2, 2, 2))
        grads = [rng.uniform(-1, 1, size=w0.shape) for _ in range(3)]

        w_ref = w0.copy()
        m = np.zeros_like(w0)
        v = np.zeros_like(w0)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9 ** t)
            v_hat = v / (1 - 0.999 ** t)
            w_ref -= 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)

        w = Tensor(w0.copy(), requires_grad=True)
        state = AdamState()
        for g in grads:
            w.grad = g
            adam_step({"w": w}, state, lr=1e-3)
        assert np.allclose(w.data, w_ref, rtol=1e-14)

    def test_missing_gradient_leaves_parameter_alone(self):
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float64), requires_grad=True)
        adam_step({"w": w}, AdamState(), lr=1.0)
        assert w.data.ravel()[0] == 1.0


class TestPatchSampling:
    def test_shapes_and_alignment(self):
        pairs = tiny_pairs(count=2, bands=5, size=10)
        rng = np.random.default_rng(1)
        xs, ys = sample_patches(pairs, count=6, patch=4, rng=rng)
        assert xs.shape == (6, 3, 4, 4)
        assert ys.shape == (6, 5, 4, 4)

    def test_patches_are_true_crops(self):
        # a single image with unique values lets us locate each crop
        rng = np.random.default_rng(2)
        rgb = np.arange(3 * 8 * 8, dtype=np.float32).reshape(3, 8, 8)
        cube = np.arange(4 * 8 * 8, dtype=np.float32).reshape(4, 8, 8)
        xs, ys = sample_patches([(rgb, cube)], count=5, patch=3, rng=rng)
        for x, y in zip(xs, ys):
            corner = x[0, 0, 0]
            top, left = divmod(int(corner), 8)
            assert np.array_equal(x, rgb[:, top:top + 3, left:left + 3])
            assert np.array_equal(y, cube[:, top:top + 3, left:left + 3])

    def test_small_dataset_covered_evenly(self):
        pairs = tiny_pairs(count=4, size=6)
        tagged = [(np.full_like(r, i / 10.0), c)
                  for i, (r, c) in enumerate(pairs)]
        xs, _ = sample_patches(tagged, count=4, patch=6,
                               rng=np.random.default_rng(3))
        seen = sorted(x[0, 0, 0] for x in xs)
        assert np.allclose(seen, [0.0, 0.1, 0.2, 0.3])

    def test_deterministic_under_seed(self):
        pairs = tiny_pairs(count=3, size=9)
        a = sample_patches(pairs, 4, 5, np.random.default_rng(7))
        b = sample_patches(pairs, 4, 5, np.random.default_rng(7))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_oversized_patch_rejected(self):
        with pytest.raises(DataError, match="exceeds"):
            sample_patches(tiny_pairs(size=6), 2, 7, np.random.default_rng(0))

    def test_empty_pairs_rejected(self):
        with pytest.raises(DataError):
            sample_patches([], 2, 4, np.random.default_rng(0))


class TestEvaluate:
    def test_metrics_are_finite_and_in_range(self):
        model = build_network(tiny_config())
        rep = evaluate(model, tiny_pairs())
        assert np.isfinite([rep.mrae, rep.rmse, rep.ssim]).all()
        assert rep.mrae >= 0.0
        assert rep.rmse >= 0.0
        assert rep.ssim <= 1.0

    def test_predictions_clamped_before_scoring(self):
        # metrics must be computed on [0, 1] clamped output, so even a model
        # that rings outside the range yields mrae bounded by 1/min(target)
        model = build_network(tiny_config())
        for p in model.params().values():
            p.data *= 50.0
        cube = np.full((4, 8, 8), 0.5, dtype=np.float32)
        rgb = np.full((3, 8, 8), 0.5, dtype=np.float32)
        rep = evaluate(model, [(rgb, cube)])
        assert rep.mrae <= 1.0 + 1e-6

    def test_empty_pairs_rejected(self):
        model = build_network(tiny_config())
        with pytest.raises(DataError):
            evaluate(model, [])


class TestTrainLoop:
    def test_records_cover_every_epoch(self):
        model = build_network(tiny_config())
        pairs = tiny_pairs()
        cfg = TrainConfig(epochs=3, steps_per_epoch=2, batch_size=2, patch=8,
                          seed=0)
        seen = []
        records = train(model, pairs[:2], pairs[2:], cfg,
                        on_epoch=seen.append)
        assert [r.epoch for r in records] == [1, 2, 3]
        assert seen == records
        for r in records:
            assert r.lr == lr_at(r.epoch - 1, cfg)
            assert np.isfinite([r.train_loss, r.train_mrae, r.val_mrae,
                                r.val_rmse, r.val_ssim]).all()

    def test_loss_decreases_on_fixed_data(self):
        model = build_network(tiny_config())
        pairs = tiny_pairs(count=2)
        cfg = TrainConfig(epochs=12, steps_per_epoch=2, batch_size=2, patch=8,
                          seed=1)
        records = train(model, pairs, [], cfg)
        assert records[-1].train_loss < records[0].train_loss

    def test_empty_validation_reports_nan(self):
        model = build_network(tiny_config())
        cfg = TrainConfig(epochs=1, steps_per_epoch=1, batch_size=1, patch=8)
        records = train(model, tiny_pairs(count=1), [], cfg)
        assert np.isnan(records[0].val_mrae)

    def test_training_updates_parameters(self):
        model = build_network(tiny_config())
        before = {k: v.data.copy() for k, v in model.params().items()}
        cfg = TrainConfig(epochs=1, steps_per_epoch=1, batch_size=2, patch=8)
        train(model, tiny_pairs(), [], cfg)
        changed = [k for k, v in model.params().items()
                   if not np.array_equal(before[k], v.data)]
        assert len(changed) == len(before)

    def test_non_finite_loss_aborts(self):
        model = build_network(tiny_config())
        rgb = np.full((3, 8, 8), np.nan, dtype=np.float32)
        cube = np.full((4, 8, 8), 0.5, dtype=np.float32)
        cfg = TrainConfig(epochs=1, steps_per_epoch=1, batch_size=1, patch=8)
        with pytest.raises(TrainingError, match="non-finite"):
            train(model, [(rgb, cube)], [], cfg)

    def test_config_validation(self):
        with pytest.raises(DataError):
            TrainConfig(epochs=0).validate()
        with pytest.raises(DataError):
            TrainConfig(lr_start=-1.0).validate()
        with pytest.raises(DataError):
            TrainConfig(beta1=1.0).validate()
