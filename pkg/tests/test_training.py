import math

import numpy as np
import pytest

from aspun.autodiff.gradcheck import check_gradients
from aspun.autodiff.tensor import Tensor
from aspun.cassi import CodedMask, DispersionSpec, forward
from aspun.errors import ShapeError, TrainingDivergedError
from aspun.network import NetworkConfig, UnfoldingNetwork
from aspun.training import (
    AdamState,
    SyntheticSceneSpec,
    TrainConfig,
    adam_step,
    charbonnier_loss,
    cosine_lr,
    generate_scene,
    psnr,
    ssim,
    train,
)


def tiny_setup(seed=0, height=16, width=16, channels=4):
    rng = np.random.default_rng(seed)
    scene = generate_scene(SyntheticSceneSpec(height, width, channels, blob_count=4,
                                              seed=seed))
    mask = CodedMask((rng.uniform(0, 1, (height, width)) > 0.5).astype(float))
    spec = DispersionSpec(1)
    cfg = NetworkConfig(stages=1, base_channels=8, window_size=4, pool_factor=2,
                        num_heads=2)
    return scene, mask, spec, cfg


class TestCharbonnier:
    def test_equals_eps_at_zero_residual(self):
        rng = np.random.default_rng(0)
        data = rng.uniform(0, 1, (5, 5, 2))
        loss = charbonnier_loss(Tensor(data), data, eps=1e-3)
        assert loss.item() == pytest.approx(1e-3, abs=1e-18)

    def test_small_eps_approaches_mae(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0, 1, (8, 8))
        delta = rng.uniform(1e-3, 0.5, (8, 8)) * np.sign(rng.standard_normal((8, 8)))
        gt = pred + delta
        loss = charbonnier_loss(Tensor(pred), gt, eps=1e-8).item()
        mae = float(np.mean(np.abs(delta)))
        assert abs(loss - mae) < 1e-6

    def test_lower_bound_is_eps(self):
        rng = np.random.default_rng(2)
        pred = rng.standard_normal((4, 4))
        gt = rng.standard_normal((4, 4))
        assert charbonnier_loss(Tensor(pred), gt, eps=0.05).item() >= 0.05

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        pred = Tensor(rng.standard_normal((4, 4, 2)), requires_grad=True)
        gt = rng.standard_normal((4, 4, 2))
        error = check_gradients(lambda: charbonnier_loss(pred, gt, eps=1e-3), [pred],
                                rng=rng)
        assert error < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            charbonnier_loss(Tensor(np.ones((2, 2))), np.ones((3, 2)), eps=1e-3)

    def test_positive_eps_required(self):
        with pytest.raises(ShapeError):
            charbonnier_loss(Tensor(np.ones(2)), np.ones(2), eps=0.0)


class TestCosineSchedule:
    def test_initial_rate(self):
        cfg = TrainConfig(lr_initial=3e-4, lr_min=0.0, total_steps=100)
        assert cosine_lr(0, cfg) == pytest.approx(3e-4, abs=0)

    def test_final_rate_is_minimum(self):
        cfg = TrainConfig(lr_initial=3e-4, lr_min=1e-6, total_steps=100)
        assert cosine_lr(100, cfg) == pytest.approx(1e-6, abs=1e-20)

    def test_midpoint(self):
        cfg = TrainConfig(lr_initial=3e-4, lr_min=1e-6, total_steps=100)
        assert cosine_lr(50, cfg) == pytest.approx((3e-4 + 1e-6) / 2, rel=1e-12)


class TestAdam:
    def test_three_step_hand_trace(self):
        # p0=1, constant gradient 0.5, lr=0.1, beta1=0.9, beta2=0.999,
        # eps=1e-8; values from evaluating the update equations by hand.
        cfg = TrainConfig(lr_initial=0.1, adam_beta1=0.9, adam_beta2=0.999,
                          adam_eps=1e-8)
        p = Tensor(np.array([1.0]), requires_grad=True)
        params = {"p": p}
        state = AdamState.for_params(params)
        expected = [0.900000002, 0.8000000040000006, 0.7000000060000007]
        for target in expected:
            p.grad = np.array([0.5])
            adam_step(params, state, lr=0.1, cfg=cfg)
            assert p.data[0] == pytest.approx(target, abs=1e-15)

    def test_zero_gradient_leaves_parameters(self):
        cfg = TrainConfig()
        p = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        params = {"p": p}
        state = AdamState.for_params(params)
        p.grad = np.zeros(2)
        before = p.data.copy()
        adam_step(params, state, lr=0.1, cfg=cfg)
        np.testing.assert_array_equal(p.data, before)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        # With constant gradient g, m_hat -> g and v_hat -> g^2, so the
        # per-step |update| approaches lr.
        cfg = TrainConfig()
        p = Tensor(np.array([0.0]), requires_grad=True)
        params = {"p": p}
        state = AdamState.for_params(params)
        lr = 0.01
        for _ in range(200):
            p.grad = np.array([3.7])
            adam_step(params, state, lr=lr, cfg=cfg)
        before = p.data[0]
        p.grad = np.array([3.7])
        adam_step(params, state, lr=lr, cfg=cfg)
        assert abs(p.data[0] - before) == pytest.approx(lr, rel=1e-6)


class TestMetrics:
    def test_psnr_20db(self):
        gt = np.zeros((10, 10))
        pred = np.full((10, 10), 0.1)  # MSE = 0.01
        assert psnr(pred, gt, peak=1.0) == pytest.approx(20.0, abs=1e-12)

    def test_psnr_peak255(self):
        gt = np.zeros((10, 10))
        pred = np.ones((10, 10))  # MSE = 1
        assert psnr(pred, gt, peak=255.0) == pytest.approx(48.1308, abs=1e-4)
        assert psnr(pred, gt, peak=255.0) == pytest.approx(20 * math.log10(255), rel=1e-12)

    def test_psnr_identical_is_sentinel(self):
        x = np.random.default_rng(4).uniform(0, 1, (6, 6))
        assert psnr(x, x) == math.inf

    def test_psnr_strictly_decreasing_in_mse(self):
        gt = np.zeros((8, 8))
        values = [psnr(np.full((8, 8), v), gt) for v in (0.05, 0.1, 0.2, 0.4)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_ssim_self_is_one(self):
        x = np.random.default_rng(5).uniform(0, 1, (16, 16, 3))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_constant_fields_closed_form(self):
        mu1, mu2 = 0.3, 0.7
        a = np.full((16, 16), mu1)
        b = np.full((16, 16), mu2)
        c1 = 0.01 ** 2
        expected = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_ssim_symmetric(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (14, 14))
        b = rng.uniform(0, 1, (14, 14))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_ssim_translation_invariant_with_matching_crop(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0, 1, (24, 24))
        b = rng.uniform(0, 1, (24, 24))
        original = ssim(a[4:20, 4:20], b[4:20, 4:20])
        shifted_a, shifted_b = a[1:, 1:], b[1:, 1:]
        translated = ssim(shifted_a[3:19, 3:19], shifted_b[3:19, 3:19])
        assert original == pytest.approx(translated, abs=0)

    def test_ssim_range(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(0, 1, (16, 16))
        b = rng.uniform(0, 1, (16, 16))
        assert -1.0 <= ssim(a, b) <= 1.0


class TestSceneGeneration:
    def test_deterministic(self):
        spec = SyntheticSceneSpec(16, 16, 4, blob_count=5, seed=11)
        a = generate_scene(spec)
        b = generate_scene(spec)
        np.testing.assert_array_equal(a.data, b.data)

    def test_range(self):
        scene = generate_scene(SyntheticSceneSpec(16, 16, 4, blob_count=20, seed=12))
        assert scene.data.min() >= 0.0 and scene.data.max() <= 1.0

    def test_zero_blobs_gives_zero_cube(self):
        scene = generate_scene(SyntheticSceneSpec(8, 8, 3, blob_count=0, seed=13))
        np.testing.assert_array_equal(scene.data, np.zeros((8, 8, 3)))


class TestTrainLoop:
    def test_step_zero_loss_matches_fresh_network(self):
        scene, mask, spec, cfg = tiny_setup()
        net = UnfoldingNetwork(cfg, 4, rng=0)
        y = forward(scene, mask, spec)
        fresh = charbonnier_loss(net(y, mask, spec), scene.data, 1e-3).item()
        tcfg = TrainConfig(total_steps=3, seed=5, eval_interval=0)
        result = train(net, tcfg, [scene], mask, spec)
        assert result.loss_trace[0][1] == pytest.approx(fresh, rel=1e-12)

    def test_same_seed_identical_traces(self):
        scene, mask, spec, cfg = tiny_setup()
        traces = []
        for _ in range(2):
            net = UnfoldingNetwork(cfg, 4, rng=0)
            tcfg = TrainConfig(total_steps=5, seed=5, eval_interval=0)
            traces.append(train(net, tcfg, [scene], mask, spec).loss_trace)
        assert traces[0] == traces[1]

    def test_zero_learning_rate_leaves_parameters_bit_identical(self):
        scene, mask, spec, cfg = tiny_setup()
        net = UnfoldingNetwork(cfg, 4, rng=0, residual_scale=0.1)
        before = {k: v.copy() for k, v in net.state_dict().items()}
        tcfg = TrainConfig(lr_initial=1e-30, lr_min=0.0, total_steps=2, seed=5,
                           eval_interval=0)
        # lr_initial must exceed lr_min, so emulate lr == 0 by calling the
        # optimizer directly with lr=0 after a real backward pass.
        y = forward(scene, mask, spec)
        loss = charbonnier_loss(net(y, mask, spec), scene.data, 1e-3)
        net.zero_grad()
        loss.backward()
        params = net.parameters()
        adam_step(params, AdamState.for_params(params), lr=0.0, cfg=tcfg)
        after = net.state_dict()
        for key in before:
            np.testing.assert_array_equal(before[key], after[key])

    def test_nan_loss_aborts_with_step_index(self):
        scene, mask, spec, cfg = tiny_setup()
        net = UnfoldingNetwork(cfg, 4, rng=0)
        poisoned = next(iter(net.parameters().values()))
        poisoned.data[...] = np.nan
        tcfg = TrainConfig(total_steps=3, seed=5, eval_interval=0)
        with np.errstate(invalid="ignore"):
            with pytest.raises(TrainingDivergedError) as info:
                train(net, tcfg, [scene], mask, spec)
        assert info.value.step == 0

    def test_artifacts_written(self, tmp_path):
        scene, mask, spec, cfg = tiny_setup()
        net = UnfoldingNetwork(cfg, 4, rng=0)
        tcfg = TrainConfig(total_steps=2, seed=5, eval_interval=1)
        train(net, tcfg, [scene], mask, spec, eval_scenes=[scene], out_dir=tmp_path)
        assert (tmp_path / "checkpoint.aspw").exists()
        assert (tmp_path / "loss_trace.csv").exists()
        assert (tmp_path / "metrics.csv").exists()
        lines = (tmp_path / "loss_trace.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loss,lr"
        assert len(lines) == 3

    def test_loss_decreases_on_short_run(self):
        scene, mask, spec, cfg = tiny_setup()
        net = UnfoldingNetwork(cfg, 4, rng=0)
        tcfg = TrainConfig(total_steps=30, seed=5, eval_interval=0, lr_initial=1e-3)
        result = train(net, tcfg, [scene], mask, spec)
        assert result.loss_trace[-1][1] < result.loss_trace[0][1]

    def test_batch_loss_is_scene_average(self):
        scene, mask, spec, cfg = tiny_setup()
        other = generate_scene(SyntheticSceneSpec(16, 16, 4, blob_count=3, seed=77))
        scenes = [scene, other]
        losses = {}
        for batch_size in (1, 2):
            net = UnfoldingNetwork(cfg, 4, rng=0)
            tcfg = TrainConfig(total_steps=1, batch_size=batch_size, seed=9,
                               eval_interval=0)
            losses[batch_size] = train(net, tcfg, scenes, mask, spec).loss_trace[0][1]
        # With two scenes the batch-2 loss at step 0 is the mean of the two
        # per-scene fresh-network losses, whichever scenes the sampler drew.
        per_scene = []
        for s in scenes:
            net = UnfoldingNetwork(cfg, 4, rng=0)
            y = forward(s, mask, spec)
            per_scene.append(charbonnier_loss(net(y, mask, spec), s.data, 1e-3).item())
        candidates = {0.5 * (a + b) for a in per_scene for b in per_scene}
        assert any(abs(losses[2] - c) < 1e-12 for c in candidates)
