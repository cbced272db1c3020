"""Unfolded reconstruction network (ASPUN).

Each of the K stages runs one accelerated proximal-gradient iteration in
which both pieces are learned:

* the gradient step uses a per-channel step size predicted from the
  gradient cube by a small MLP (adaptive step-size perception, ASP);
* the proximal map is a three-level U-shaped aggregation module (NLIA)
  whose five transformer blocks (NHAT) pair pooled non-local window
  attention (PNA) with a gated convolutional local branch (GLA), each
  followed by a spectral gate (ISA) driven by the previous stage's
  bottleneck features.

Momentum scalars and the extrapolation rule are imported from
:mod:`aspun.fista` so the solver and the network share one
implementation.  A freshly built network (``residual_scale=0``) has its
stage output convolution and step-size head zero-initialized, so it
reproduces the plain FISTA trajectory with an identity prox exactly.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, no_grad
from .cassi import CodedMask, DispersionSpec, Measurement, SpectralCube, shift_back_data
from .errors import ConfigError, ShapeError, StageError
from .fista import extrapolate, momentum_update

STEP_EPSILON = 1e-4
# A fresh step predictor emits this constant on every channel (its output
# layer starts at zero weights with the bias solving softplus(b) = 0.1).
INITIAL_STEP = 0.1 + STEP_EPSILON
_RAW_INITIAL_STEP = math.log(math.expm1(0.1))

ATTENTION_KINDS = ("pna", "wmsa")


@dataclass(frozen=True)
class NetworkConfig:
    """Topology and ablation switches for the unfolding network.

    ``stages`` of 3, 6, and 9 are the small/medium/large variants; any
    positive count is accepted.  ``attention_kind="wmsa"`` forces the
    key/value pool factor to 1, turning PNA into plain window attention
    with an identical parameter count.
    """

    stages: int = 3
    base_channels: int = 16
    window_size: int = 4
    pool_factor: int = 2
    num_heads: int = 2
    ffn_expansion: int = 2
    levels: int = 3
    use_asp: bool = True
    use_isa: bool = True
    use_gla: bool = True
    use_pna: bool = True
    use_pna_transformer: bool = True
    attention_kind: str = "pna"

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError("stages must be at least 1")
        if self.levels != 3:
            raise ConfigError("the U-shape is fixed at 3 levels (two encoders + bottleneck)")
        if self.base_channels < 1 or self.base_channels % self.num_heads:
            raise ConfigError("base_channels must be a positive multiple of num_heads")
        if self.window_size < 1 or self.pool_factor < 1:
            raise ConfigError("window_size and pool_factor must be positive")
        if self.window_size % self.pool_factor:
            raise ConfigError("pool_factor must divide window_size")
        if self.ffn_expansion < 1:
            raise ConfigError("ffn_expansion must be at least 1")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError(f"attention_kind must be one of {ATTENTION_KINDS}")
        if not (self.use_pna or self.use_gla):
            raise ConfigError("at least one attention branch must be enabled")

    @property
    def effective_pool(self) -> int:
        return 1 if self.attention_kind == "wmsa" else self.pool_factor

    @property
    def spatial_multiple(self) -> int:
        """Spatial extents must be divisible by this (window * downsamplings)."""
        return self.window_size * 2 ** (self.levels - 1)


class Module:
    """Parameter container; submodules and parameter tensors are attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{index}."))
        return out

    def parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def zero_grad(self):
        for tensor in self.named_parameters().values():
            tensor.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ConfigError(f"checkpoint mismatch: missing={missing}, unexpected={unexpected}")
        for name, tensor in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError(
                    f"checkpoint entry {name!r} has shape {value.shape}, expected {tensor.shape}"
                )
            tensor.data = value.copy()
            tensor.grad = None


def _init_weight(rng, shape, fan_in, scale=1.0) -> Tensor:
    if scale == 0.0:
        return Tensor(np.zeros(shape), requires_grad=True)
    std = scale / np.sqrt(fan_in)
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


class Linear(Module):
    """Dense map over the trailing axis: x (..., n_in) -> (..., n_out)."""

    def __init__(self, n_in, n_out, rng, scale=1.0, bias=True):
        self.weight = _init_weight(rng, (n_in, n_out), n_in, scale)
        if bias:
            self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        else:
            self.bias = None

    def __call__(self, x):
        if x.ndim == 1:
            out = ops.reshape(ops.matmul(ops.reshape(x, (1, x.shape[0])), self.weight),
                              (self.weight.shape[1],))
        else:
            out = ops.matmul(x, self.weight)
        if self.bias is None:
            return out
        return ops.add(out, self.bias)


class Conv2d(Module):
    def __init__(self, kernel, n_in, n_out, rng, stride=1, padding=0, groups=1, scale=1.0):
        fan_in = kernel * kernel * (n_in // groups)
        self.weight = _init_weight(rng, (kernel, kernel, n_in // groups, n_out), fan_in, scale)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self._stride, self._padding, self._groups = stride, padding, groups

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self._stride,
                          padding=self._padding, groups=self._groups)


class ConvTranspose2d(Module):
    """Upsampling adjoint conv; maps n_in channels to n_out channels."""

    def __init__(self, kernel, n_in, n_out, rng, stride=1):
        self.weight = _init_weight(rng, (kernel, kernel, n_out, n_in), n_in)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self._stride = stride

    def __call__(self, x):
        return ops.transposed_conv2d(x, self.weight, self.bias, stride=self._stride)


class LayerNorm(Module):
    def __init__(self, dim):
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return ops.layer_norm(x, self.scale, self.shift)


class PooledWindowAttention(Module):
    """Window attention with average-pooled keys/values (PNA).

    Queries come from all window tokens; keys and values from the
    pool-factor-averaged window, giving (window/pool)^2 tokens.  With
    ``pool == 1`` this is exactly standard window self-attention (WMSA).
    With ``use_transformer=False`` the attention computation is dropped
    and the branch reduces to its value/output projections.
    """

    def __init__(self, dim, heads, window, pool, rng, use_transformer=True):
        if dim % heads:
            raise ConfigError(f"heads {heads} must divide dim {dim}")
        if pool < 1 or window % pool:
            raise ConfigError(f"pool {pool} must divide window {window}")
        self._dim, self._heads, self._window, self._pool = dim, heads, window, pool
        self._use_transformer = use_transformer
        if use_transformer:
            self.query = Linear(dim, dim, rng)
            # No key bias: softmax is invariant to a constant shift of the
            # logits per query, so the parameter would be inert.
            self.key = Linear(dim, dim, rng, bias=False)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _window_tokens(self, x, window):
        windows = ops.window_partition(x, window)
        count = windows.shape[0]
        return ops.reshape(windows, (count, window * window, x.shape[2])), count

    def attend(self, x):
        """Returns (output, attention) where attention is None without the
        transformer path; attention has shape (windows, heads, q, kv)."""
        height, width, dim = x.shape
        if dim != self._dim:
            raise ShapeError(f"expected {self._dim} channels, got {dim}")
        tokens, count = self._window_tokens(x, self._window)
        if not self._use_transformer:
            mixed = self.out(self.value(tokens))
            merged = ops.reshape(mixed, (count, self._window, self._window, dim))
            return ops.window_merge(merged, height, width), None
        if self._pool > 1:
            pooled = ops.avg_pool2d(x, self._pool)
            kv_tokens, _ = self._window_tokens(pooled, self._window // self._pool)
        else:
            kv_tokens = tokens
        head_dim = dim // self._heads
        q_count = tokens.shape[1]
        kv_count = kv_tokens.shape[1]

        def into_heads(t, n_tokens):
            t = ops.reshape(t, (count, n_tokens, self._heads, head_dim))
            return ops.permute(t, (0, 2, 1, 3))

        q = into_heads(self.query(tokens), q_count)
        k = into_heads(self.key(kv_tokens), kv_count)
        v = into_heads(self.value(kv_tokens), kv_count)
        logits = ops.mul(ops.matmul(q, ops.permute(k, (0, 1, 3, 2))), head_dim ** -0.5)
        attention = ops.softmax(logits, axis=-1)
        context = ops.permute(ops.matmul(attention, v), (0, 2, 1, 3))
        merged = self.out(ops.reshape(context, (count, q_count, dim)))
        merged = ops.reshape(merged, (count, self._window, self._window, dim))
        return ops.window_merge(merged, height, width), attention

    def __call__(self, x):
        return self.attend(x)[0]


class GatedLocalAttention(Module):
    """Convolutional local branch (GLA): sigmoid context scores gate values.

    context = sigmoid(pointwise(gelu(conv3x3(x)))), value = pointwise(x),
    output = context * value.
    """

    def __init__(self, dim, rng, use_context=True):
        self.local = Conv2d(3, dim, dim, rng, padding=1)
        self.score = Conv2d(1, dim, dim, rng)
        self.value = Conv2d(1, dim, dim, rng)
        self._use_context = use_context

    def __call__(self, x):
        value = self.value(x)
        if not self._use_context:
            return value
        context = ops.sigmoid(self.score(ops.gelu(self.local(x))))
        return ops.mul(context, value)


class HybridAttention(Module):
    """NLHA: sum of the non-local (PNA) and local (GLA) branches, projected.

    A disabled branch contributes zero and owns no parameters; disabling
    both is a configuration error.
    """

    def __init__(self, dim, cfg: NetworkConfig, rng):
        if not (cfg.use_pna or cfg.use_gla):
            raise ConfigError("at least one attention branch must be enabled")
        if cfg.use_pna:
            self.pooled = PooledWindowAttention(
                dim, cfg.num_heads, cfg.window_size, cfg.effective_pool, rng,
                use_transformer=cfg.use_pna_transformer)
        if cfg.use_gla:
            self.gated = GatedLocalAttention(dim, rng)
        self.fuse = Conv2d(1, dim, dim, rng)
        self._use_pna, self._use_gla = cfg.use_pna, cfg.use_gla

    def __call__(self, x):
        if self._use_pna and self._use_gla:
            mixed = ops.add(self.pooled(x), self.gated(x))
        elif self._use_pna:
            mixed = self.pooled(x)
        else:
            mixed = self.gated(x)
        return self.fuse(mixed)


class GatedFeedForward(Module):
    """Two parallel pointwise expansions; the gelu-gated one scales the other."""

    def __init__(self, dim, expansion, rng):
        self.gate = Linear(dim, dim * expansion, rng)
        self.value = Linear(dim, dim * expansion, rng)
        self.project = Linear(dim * expansion, dim, rng)

    def __call__(self, x):
        return self.project(ops.mul(ops.gelu(self.gate(x)), self.value(x)))


class HybridTransformerBlock(Module):
    """NHAT: pre-norm hybrid attention and gated FFN, two residual skips."""

    def __init__(self, dim, cfg: NetworkConfig, rng):
        self.norm_attn = LayerNorm(dim)
        self.attention = HybridAttention(dim, cfg, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = GatedFeedForward(dim, cfg.ffn_expansion, rng)

    def __call__(self, x):
        u = ops.add(x, self.attention(self.norm_attn(x)))
        return ops.add(u, self.ffn(self.norm_ffn(u)))


class SpectralGate(Module):
    """ISA: sigmoid channel coefficients from the previous stage's summary.

    With no previous stage (summary None) the gate is the identity, so the
    first stage's coefficients are implicitly all ones.
    """

    def __init__(self, summary_dim, dim, rng):
        self.reduce = Linear(summary_dim, dim, rng)
        self.expand = Linear(dim, dim, rng)

    def coefficients(self, summary):
        pooled = ops.global_avg_pool(summary)
        return ops.sigmoid(self.expand(ops.gelu(self.reduce(pooled))))

    def __call__(self, x, summary):
        if summary is None:
            return x
        return ops.mul(x, self.coefficients(summary))


class ChannelStepPredictor(Module):
    """ASP: one positive step size per spectral channel from the gradient cube.

    Global-average-pool the gradient, then a 2-layer MLP (hidden 4C, gelu)
    with a softplus + epsilon output map.  The output layer's weights start
    at zero (bias at softplus^-1(0.1)), so a fresh predictor emits the
    constant ``INITIAL_STEP`` on every channel.
    """

    def __init__(self, channels, rng, scale=0.0):
        self.reduce = Linear(channels, 4 * channels, rng)
        self.expand = Linear(channels * 4, channels, rng, scale=scale)
        self.expand.bias.data = np.full(channels, _RAW_INITIAL_STEP)

    def __call__(self, grad_cube):
        pooled = ops.global_avg_pool(grad_cube)
        raw = self.expand(ops.gelu(self.reduce(pooled)))
        return ops.add(ops.softplus(raw), STEP_EPSILON)


class ScalarStep(Module):
    """Single learnable step size shared by all channels (ASP disabled)."""

    def __init__(self, rng):
        self.raw = Tensor(_RAW_INITIAL_STEP, requires_grad=True)

    def __call__(self, grad_cube):
        return ops.add(ops.softplus(self.raw), STEP_EPSILON)


def asp_step(z, y, mask_values: np.ndarray, step: int, predictor):
    """Adaptive gradient step: r = z - rho (.) A^T(A z - y).

    Returns the updated iterate and the positive step-size tensor (one
    entry per channel, or a scalar for :class:`ScalarStep`).
    """
    channels = z.shape[2]
    residual = ops.sub(ops.cassi_forward(z, mask_values, step), y)
    grad_cube = ops.cassi_adjoint(residual, mask_values, step, channels)
    rho = predictor(grad_cube)
    return ops.sub(z, ops.mul(rho, grad_cube)), rho


class ProxUNet(Module):
    """NLIA: U-shaped learned prox with five NHAT blocks and five gates.

    Two encoder levels, a bottleneck, and two decoder levels with skip
    fusion; downsampling is a 4x4 stride-2 conv doubling channels, up is
    a 2x2 stride-2 transposed conv halving them.  The final 3x3 conv is
    zero at ``residual_scale=0``, making the stage an identity prox at
    initialization.  Returns the output cube and the bottleneck features
    (this stage's summary for the next stage's gates).
    """

    def __init__(self, cfg: NetworkConfig, cube_channels, rng, residual_scale=0.0):
        c1 = cfg.base_channels
        c2, c3 = 2 * c1, 4 * c1
        self._cfg = cfg
        self.embed = Conv2d(3, cube_channels, c1, rng, padding=1)
        self.encoder1 = HybridTransformerBlock(c1, cfg, rng)
        self.down1 = Conv2d(4, c1, c2, rng, stride=2, padding=1)
        self.encoder2 = HybridTransformerBlock(c2, cfg, rng)
        self.down2 = Conv2d(4, c2, c3, rng, stride=2, padding=1)
        self.bottleneck = HybridTransformerBlock(c3, cfg, rng)
        self.up1 = ConvTranspose2d(2, c3, c2, rng, stride=2)
        self.fuse1 = Conv2d(1, 2 * c2, c2, rng)
        self.decoder1 = HybridTransformerBlock(c2, cfg, rng)
        self.up2 = ConvTranspose2d(2, c2, c1, rng, stride=2)
        self.fuse2 = Conv2d(1, 2 * c1, c1, rng)
        self.decoder2 = HybridTransformerBlock(c1, cfg, rng)
        self.project = Conv2d(3, c1, cube_channels, rng, padding=1, scale=residual_scale)
        if cfg.use_isa:
            self.gates = [SpectralGate(c3, dim, rng) for dim in (c1, c2, c3, c2, c1)]

    def _gate(self, index, features, summary):
        if not self._cfg.use_isa:
            return features
        return self.gates[index](features, summary)

    def __call__(self, r, summary):
        height, width, _ = r.shape
        multiple = self._cfg.spatial_multiple
        if height % multiple or width % multiple:
            raise ShapeError(
                f"spatial extents {height}x{width} must be divisible by {multiple}"
            )
        feat = self.embed(r)
        enc1 = self._gate(0, self.encoder1(feat), summary)
        enc2 = self._gate(1, self.encoder2(self.down1(enc1)), summary)
        mid = self._gate(2, self.bottleneck(self.down2(enc2)), summary)
        dec1 = self.fuse1(ops.concat([self.up1(mid), enc2], axis=-1))
        dec1 = self._gate(3, self.decoder1(dec1), summary)
        dec2 = self.fuse2(ops.concat([self.up2(dec1), enc1], axis=-1))
        dec2 = self._gate(4, self.decoder2(dec2), summary)
        return ops.add(r, self.project(dec2)), mid


class UnfoldStage(Module):
    """One unfolding iteration: adaptive gradient step plus learned prox."""

    def __init__(self, cfg: NetworkConfig, cube_channels, rng, residual_scale=0.0):
        if cfg.use_asp:
            self.step_size = ChannelStepPredictor(cube_channels, rng, scale=residual_scale)
        else:
            self.step_size = ScalarStep(rng)
        self.prox = ProxUNet(cfg, cube_channels, rng, residual_scale)

    def __call__(self, z, y, mask_values, step, summary):
        r, rho = asp_step(z, y, mask_values, step, self.step_size)
        x, summary = self.prox(r, summary)
        return x, summary, rho


class UnfoldingNetwork(Module):
    """K-stage unfolded solver tied together by the FISTA momentum rule."""

    def __init__(self, config: NetworkConfig, cube_channels: int,
                 rng: int | np.random.Generator = 0, residual_scale: float = 0.0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self._config = config
        self._channels = cube_channels
        self.stages = [UnfoldStage(config, cube_channels, rng, residual_scale)
                       for _ in range(config.stages)]

    @property
    def config(self) -> NetworkConfig:
        return self._config

    @property
    def cube_channels(self) -> int:
        return self._channels

    def __call__(self, y, mask, spec: DispersionSpec) -> Tensor:
        """Map a measurement tensor to the reconstructed cube tensor.

        ``y`` may be a Measurement or raw 2D array; ``mask`` a CodedMask or
        raw 2D array.  Errors inside a stage are re-raised as
        :class:`StageError` carrying the 1-based stage index.
        """
        y_data = np.asarray(y.data if isinstance(y, Measurement) else y, dtype=np.float64)
        mask_values = np.asarray(
            mask.values if isinstance(mask, CodedMask) else mask, dtype=np.float64)
        width = mask_values.shape[1]
        x_curr = Tensor(shift_back_data(y_data, spec.step, width, self._channels))
        y_tensor = Tensor(y_data)
        z = x_curr
        t = 1.0
        summary = None
        for index, stage in enumerate(self.stages, start=1):
            try:
                x_new, summary, _ = stage(z, y_tensor, mask_values, spec.step, summary)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(index, exc) from exc
            t_next = momentum_update(t)
            z = extrapolate(x_new, x_curr, t, t_next)
            x_curr = x_new
            t = t_next
        return x_curr

    def reconstruct(self, y, mask, spec: DispersionSpec) -> SpectralCube:
        """Inference helper: run the network without recording a graph."""
        with no_grad():
            return SpectralCube(self(y, mask, spec).data)


def unfold_forward(y, mask, spec: DispersionSpec, net: UnfoldingNetwork) -> Tensor:
    """Functional alias for ``net(y, mask, spec)``."""
    return net(y, mask, spec)
