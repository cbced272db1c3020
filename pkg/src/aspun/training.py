"""Desk-scale training protocol: Charbonnier loss, Adam, cosine annealing,
synthetic scene generation, and PSNR/SSIM evaluation.

Scenes are sums of random spatial Gaussian blobs, each carrying a smooth
random spectral signature, clipped to [0, 1].  Training pairs a scene
with its simulated snapshot; everything is deterministic for a fixed
seed.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad
from .cassi import CodedMask, DispersionSpec, SpectralCube, simulate
from .errors import ShapeError, TrainingDivergedError
from .io import write_checkpoint, write_csv
from .network import UnfoldingNetwork


@dataclass
class TrainConfig:
    """Optimizer and schedule settings (defaults are the desk-scale run)."""

    lr_initial: float = 3e-4
    lr_min: float = 1e-6
    total_steps: int = 500
    batch_size: int = 1
    charbonnier_eps: float = 1e-3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 100

    def __post_init__(self):
        if not (self.lr_initial > self.lr_min >= 0):
            raise ShapeError("need lr_initial > lr_min >= 0")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ShapeError("total_steps and batch_size must be positive")
        if self.charbonnier_eps <= 0:
            raise ShapeError("charbonnier_eps must be positive")


@dataclass
class SyntheticSceneSpec:
    """Random blob scene parameters; values always land in [0, 1]."""

    height: int = 32
    width: int = 32
    channels: int = 8
    blob_count: int = 6
    spectral_smoothness: float = 2.0
    seed: int = 0


def charbonnier_loss(pred: Tensor, target, eps: float) -> Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2); a smooth l1 surrogate.

    Differentiable in ``pred``; equals ``eps`` exactly when pred == target.
    """
    if eps <= 0:
        raise ShapeError("eps must be positive")
    target_data = target.data if isinstance(target, (Tensor, SpectralCube)) else np.asarray(target)
    if tuple(pred.shape) != tuple(target_data.shape):
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target_data.shape}")
    diff = ops.sub(pred, Tensor(target_data))
    return ops.tensor_mean(ops.sqrt(ops.add(ops.mul(diff, diff), eps * eps)))


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine-annealed rate from lr_initial (step 0) to lr_min (last step)."""
    phase = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    return cfg.lr_min + 0.5 * (cfg.lr_initial - cfg.lr_min) * (1.0 + math.cos(math.pi * phase))


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, cfg: TrainConfig):
    """One bias-corrected Adam update, in place; missing grads count as zero."""
    state.step += 1
    correction1 = 1.0 - cfg.adam_beta1 ** state.step
    correction2 = 1.0 - cfg.adam_beta2 ** state.step
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        state.m[name] = cfg.adam_beta1 * state.m[name] + (1.0 - cfg.adam_beta1) * grad
        state.v[name] = cfg.adam_beta2 * state.v[name] + (1.0 - cfg.adam_beta2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def psnr(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the inputs are identical."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    return np.outer(kernel, kernel)


def ssim(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity, 11x11 Gaussian window (sigma 1.5),
    k1=0.01, k2=0.03; multichannel inputs are averaged over channels."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 3:
        return float(np.mean([ssim(pred[:, :, c], gt[:, :, c], peak)
                              for c in range(pred.shape[2])]))
    if pred.ndim != 2:
        raise ShapeError(f"ssim expects 2D or 3D arrays, got shape {pred.shape}")
    window = _gaussian_window()
    if pred.shape[0] < window.shape[0] or pred.shape[1] < window.shape[1]:
        raise ShapeError("images smaller than the 11x11 ssim window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def smooth(img):
        return convolve2d(img, window, mode="valid")

    mu1, mu2 = smooth(pred), smooth(gt)
    var1 = smooth(pred * pred) - mu1 * mu1
    var2 = smooth(gt * gt) - mu2 * mu2
    cov = smooth(pred * gt) - mu1 * mu2
    score = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2))
    return float(score.mean())


def generate_scene(spec: SyntheticSceneSpec) -> SpectralCube:
    """Sum of random Gaussian blobs, each with a smooth spectral signature."""
    rng = np.random.default_rng(spec.seed)
    data = np.zeros((spec.height, spec.width, spec.channels))
    rows = np.arange(spec.height)[:, None]
    cols = np.arange(spec.width)[None, :]
    band = np.arange(spec.channels)
    for _ in range(spec.blob_count):
        center_r = rng.uniform(0, spec.height)
        center_c = rng.uniform(0, spec.width)
        sigma_r = rng.uniform(spec.height / 8, spec.height / 3)
        sigma_c = rng.uniform(spec.width / 8, spec.width / 3)
        amplitude = rng.uniform(0.3, 1.0)
        footprint = amplitude * np.exp(
            -0.5 * (((rows - center_r) / sigma_r) ** 2 + ((cols - center_c) / sigma_c) ** 2))
        center_band = rng.uniform(0, max(spec.channels - 1, 1))
        width = spec.spectral_smoothness * rng.uniform(0.5, 1.5)
        signature = np.exp(-0.5 * ((band - center_band) / max(width, 1e-6)) ** 2)
        data += footprint[:, :, None] * signature[None, None, :]
    return SpectralCube(np.clip(data, 0.0, 1.0))


@dataclass
class TrainResult:
    """Loss trace rows (step, loss, lr), eval rows (step, psnr, ssim),
    and the final state dict."""

    loss_trace: list
    eval_rows: list
    state: dict


def evaluate(net: UnfoldingNetwork, scenes, mask: CodedMask, spec: DispersionSpec,
             noise_sigma: float = 0.0) -> tuple[float, float]:
    """Mean PSNR/SSIM of the network over (scene, simulated snapshot) pairs."""
    psnrs, ssims = [], []
    with no_grad():
        for scene in scenes:
            y = simulate(scene, mask, spec, noise_sigma, seed=0)
            recon = net(y, mask, spec).data
            psnrs.append(psnr(recon, scene.data))
            ssims.append(ssim(recon, scene.data))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def train(net: UnfoldingNetwork, cfg: TrainConfig, scenes, mask: CodedMask,
          spec: DispersionSpec, eval_scenes=(), noise_sigma: float = 0.0,
          out_dir=None) -> TrainResult:
    """Adam training of the unfolding network on synthetic scenes.

    The loss at step 0 is recorded before any update, so it equals the
    fresh network's loss.  Raises :class:`TrainingDivergedError` with the
    step index if the loss becomes non-finite.  When ``out_dir`` is given,
    writes checkpoint.aspw plus loss_trace.csv and metrics.csv.
    """
    if not scenes:
        raise ShapeError("need at least one training scene")
    rng = np.random.default_rng(cfg.seed)
    measurements = [simulate(scene, mask, spec, noise_sigma, seed=cfg.seed + 1 + index)
                    for index, scene in enumerate(scenes)]
    params = net.parameters()
    state = AdamState.for_params(params)
    loss_trace = []
    eval_rows = []
    for step in range(cfg.total_steps):
        lr = cosine_lr(step, cfg)
        indices = [int(rng.integers(len(scenes))) for _ in range(cfg.batch_size)]
        total = None
        for index in indices:
            pred = net(measurements[index], mask, spec)
            loss = charbonnier_loss(pred, scenes[index].data, cfg.charbonnier_eps)
            total = loss if total is None else ops.add(total, loss)
        if cfg.batch_size > 1:
            total = ops.mul(total, 1.0 / cfg.batch_size)
        loss_value = total.item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(step)
        loss_trace.append((step, loss_value, lr))
        net.zero_grad()
        total.backward()
        adam_step(params, state, lr, cfg)
        if eval_scenes and cfg.eval_interval and (
                step % cfg.eval_interval == 0 or step == cfg.total_steps - 1):
            mean_psnr, mean_ssim = evaluate(net, eval_scenes, mask, spec, noise_sigma)
            eval_rows.append((step, mean_psnr, mean_ssim))
    result = TrainResult(loss_trace=loss_trace, eval_rows=eval_rows, state=net.state_dict())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_checkpoint(out_dir / "checkpoint.aspw", result.state)
        write_csv(out_dir / "loss_trace.csv", ["step", "loss", "lr"], loss_trace)
        if eval_rows:
            write_csv(out_dir / "metrics.csv", ["step", "psnr", "ssim"], eval_rows)
    return result
