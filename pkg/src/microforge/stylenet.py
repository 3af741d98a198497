"""Style-based generator and critic built from tensorcore primitives.

Generator: a learned constant at the base resolution runs through a chain of
upsampling blocks (fractionally-strided conv, then two conv stages).  Every
stage adds per-channel scaled Gaussian noise and applies adaptive instance
normalization whose scale/shift come from an affine transform of the style
code w, itself produced by a small fully-connected mapping network.  A 1x1
"to RGB" convolution per resolution emits the single-channel image.

Critic: a "from RGB" block (1x1 conv plus two 3x3 convs) feeds downsampling
blocks (average pooling, pixel normalization, two convs) until 4x4, where a
minibatch standard-deviation feature map is appended, followed by a 4x4 conv,
a 3x3 conv, and a dense score head.  Scores are raw reals; the classic loss
applies its own sigmoid.

Progressive growing trains the same parameter set through a resolution
schedule; a linear fade-in weight alpha blends each newly added block with
the upsampled output of the previous resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .errors import (
    ConfigInvalid,
    ResolutionMismatch,
    ResolutionNotInSchedule,
    ShapeMismatch,
    VariantDisabled,
)
from .rng import RandomStream
from .tensorcore import ParamStore, Tensor

EPS = 1e-8

DEFAULT_CHANNELS = {4: 128, 8: 128, 16: 128, 32: 64, 64: 32, 128: 16, 256: 8}

VARIANT_STANDARD = "standard"
VARIANT_RESOLUTION_INCREASE = "resolution_increase"


def _check_resolution(value, name="target_resolution"):
    if value < 8 or value > 256 or value & (value - 1):
        raise ConfigInvalid(f"{name} must be a power of two in [8, 256], got {value}")


@dataclass
class GeneratorConfig:
    target_resolution: int = 128
    latent_dim: int = 64
    mapping_depth: int = 4
    channels: dict = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    base_resolution: int = 8
    variant: str = VARIANT_STANDARD

    def __post_init__(self):
        _check_resolution(self.target_resolution)
        if self.base_resolution != 8:
            raise ConfigInvalid("base resolution is fixed at 8")
        if self.variant not in (VARIANT_STANDARD, VARIANT_RESOLUTION_INCREASE):
            raise ConfigInvalid(f"unknown variant {self.variant!r}")
        if self.latent_dim < 1 or self.mapping_depth < 1:
            raise ConfigInvalid("latent_dim and mapping_depth must be >= 1")
        top = self.top_resolution()
        r = self.base_resolution
        while r <= top:
            if r not in self.channels:
                raise ConfigInvalid(f"channel table missing entry for resolution {r}")
            r *= 2

    def top_resolution(self) -> int:
        if self.variant == VARIANT_RESOLUTION_INCREASE:
            return 2 * self.target_resolution
        return self.target_resolution

    def block_resolutions(self):
        out = []
        r = self.base_resolution
        while r <= self.top_resolution():
            out.append(r)
            r *= 2
        return out


@dataclass
class DiscriminatorConfig:
    target_resolution: int = 128
    channels: dict = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    base_resolution: int = 8

    def __post_init__(self):
        _check_resolution(self.target_resolution)
        r = 4
        while r <= self.target_resolution:
            if r not in self.channels:
                raise ConfigInvalid(f"channel table missing entry for resolution {r}")
            r *= 2

    def block_resolutions(self):
        out = []
        r = self.base_resolution
        while r <= self.target_resolution:
            out.append(r)
            r *= 2
        return out


# ---------------------------------------------------------------------------
# layer functions
# ---------------------------------------------------------------------------


def adain(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-(sample, channel) standardization with learned scale and shift.

    sigma is sqrt(population variance + 1e-8); gamma/beta are (b, c).
    """
    if x.ndim != 4 or gamma.shape != x.shape[:2] or beta.shape != x.shape[:2]:
        raise ShapeMismatch(
            f"adain: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    mu = tc.mean(x, axes=(2, 3), keepdims=True)
    var = tc.variance(x, axes=(2, 3), keepdims=True)
    norm = tc.div(tc.sub(x, mu), tc.sqrt(tc.add(var, EPS)))
    b, c = x.shape[:2]
    g = tc.reshape(gamma, (b, c, 1, 1))
    s = tc.reshape(beta, (b, c, 1, 1))
    return tc.add(tc.mul(g, norm), s)


def add_noise(x: Tensor, scale: Tensor, noise: Tensor) -> Tensor:
    """x + scale_c * noise with one noise plane shared across channels."""
    if x.ndim != 4 or scale.shape != (x.shape[1],):
        raise ShapeMismatch(f"add_noise: x {x.shape}, scale {scale.shape}")
    if noise.shape != (x.shape[0], 1, x.shape[2], x.shape[3]):
        raise ShapeMismatch(f"add_noise: noise {noise.shape} for input {x.shape}")
    s = tc.reshape(scale, (1, x.shape[1], 1, 1))
    return tc.add(x, tc.mul(s, noise))


def pixel_norm(x: Tensor) -> Tensor:
    """Normalize each pixel's feature vector: x / sqrt(mean_c(x^2) + 1e-8)."""
    ms = tc.mean(tc.mul(x, x), axes=1, keepdims=True)
    return tc.div(x, tc.sqrt(tc.add(ms, EPS)))


def batch_std(x: Tensor) -> Tensor:
    """Append one feature map holding the batch-averaged per-position
    standard deviation (population convention)."""
    mu = tc.mean(x, axes=0, keepdims=True)
    diff = tc.sub(x, mu)
    var = tc.mean(tc.mul(diff, diff), axes=0, keepdims=True)
    std = tc.sqrt(tc.add(var, EPS))
    avg = tc.mean(std)
    b, _, h, w = x.shape
    plane = tc.broadcast_to(tc.reshape(avg, (1, 1, 1, 1)), (b, 1, h, w))
    return tc.concat([x, plane], axis=1)


def _bias4(x: Tensor, bias: Tensor) -> Tensor:
    return tc.add(x, tc.reshape(bias, (1, bias.shape[0], 1, 1)))


def _lrelu(x: Tensor) -> Tensor:
    return tc.leaky_relu(x, 0.2)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


class Generator:
    """Owns the generator ParamStore and runs synthesis at any scheduled
    resolution with a fade-in weight."""

    def __init__(self, config: GeneratorConfig, init_stream: RandomStream | None = None):
        self.config = config
        self.params = ParamStore()
        stream = init_stream if init_stream is not None else RandomStream(0).split("init_g")
        ch = config.channels
        L = config.latent_dim

        def gaussian(shape, fan_in):
            return stream.normal(shape, dtype=np.float32) / np.float32(np.sqrt(fan_in))

        for i in range(config.mapping_depth):
            self.params.add(f"map{i}/w", gaussian((L, L), L))
            self.params.add(f"map{i}/b", np.zeros(L, dtype=np.float32))

        base = config.base_resolution
        self.params.add("const", stream.normal((ch[base], base, base), dtype=np.float32))
        for r in self.block_resolutions():
            c = ch[r]
            if r > base:
                self.params.add(f"b{r}/up/k", gaussian((ch[r // 2], c, 3, 3), ch[r // 2] * 9))
                self.params.add(f"b{r}/up/b", np.zeros(c, dtype=np.float32))
            for stage in (0, 1):
                if not (r == base and stage == 0):
                    self.params.add(f"b{r}/conv{stage}/k", gaussian((c, c, 3, 3), c * 9))
                    self.params.add(f"b{r}/conv{stage}/b", np.zeros(c, dtype=np.float32))
                self.params.add(f"b{r}/noise{stage}", np.zeros(c, dtype=np.float32))
                style_b = np.zeros(2 * c, dtype=np.float32)
                style_b[:c] = 1.0  # identity scale at init
                self.params.add(f"b{r}/style{stage}/w", gaussian((L, 2 * c), L))
                self.params.add(f"b{r}/style{stage}/b", style_b)
            self.params.add(f"b{r}/rgb/k", gaussian((1, c, 1, 1), c))
            self.params.add(f"b{r}/rgb/b", np.zeros(1, dtype=np.float32))

    def block_resolutions(self):
        return self.config.block_resolutions()

    def map_latent(self, z: Tensor) -> Tensor:
        """Style code from latent noise: mapping_depth dense+activation layers."""
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeMismatch(f"latent batch must be (b, {self.config.latent_dim}), got {z.shape}")
        w = z
        for i in range(self.config.mapping_depth):
            w = _lrelu(tc.dense(w, self.params[f"map{i}/w"], self.params[f"map{i}/b"]))
        return w

    def _stage(self, x: Tensor, r: int, stage: int, w: Tensor, noise_stream) -> Tensor:
        p = self.params
        key = f"b{r}/conv{stage}/k"
        if key in p:
            x = _bias4(tc.conv2d(x, p[key], stride=1, pad=1), p[f"b{r}/conv{stage}/b"])
        b, c, h, wd = x.shape
        if noise_stream is not None:
            plane = Tensor(noise_stream.normal((b, 1, h, wd), dtype=np.float32))
        else:
            plane = Tensor(np.zeros((b, 1, h, wd), dtype=np.float32))
        x = add_noise(x, p[f"b{r}/noise{stage}"], plane)
        x = _lrelu(x)
        style = tc.dense(w, p[f"b{r}/style{stage}/w"], p[f"b{r}/style{stage}/b"])
        gamma = tc.narrow(style, 1, 0, c)
        beta = tc.narrow(style, 1, c, c)
        return adain(x, gamma, beta)

    def _block(self, x: Tensor, r: int, w: Tensor, noise_stream) -> Tensor:
        if r > self.config.base_resolution:
            x = _bias4(tc.deconv2d(x, self.params[f"b{r}/up/k"], stride=2), self.params[f"b{r}/up/b"])
            x = _lrelu(x)
        x = self._stage(x, r, 0, w, noise_stream)
        return self._stage(x, r, 1, w, noise_stream)

    def _to_rgb(self, x: Tensor, r: int) -> Tensor:
        return _bias4(tc.conv2d(x, self.params[f"b{r}/rgb/k"], stride=1, pad=0),
                      self.params[f"b{r}/rgb/b"])

    def _output_resolution(self, phase_resolution: int) -> int:
        if self.config.variant == VARIANT_RESOLUTION_INCREASE:
            return 2 * phase_resolution
        return phase_resolution

    def generate(self, z: Tensor, resolution: int | None = None, alpha: float = 1.0,
                 noise_stream: RandomStream | None = None) -> Tensor:
        """Synthesize a (b, 1, R, R) batch at the given phase resolution.

        During fade-in (alpha < 1) the output blends the newest block's image
        with the nearest-upsampled image of the previous resolution.  With the
        resolution-increase variant the emitted image is twice the phase
        resolution.
        """
        if resolution is None:
            resolution = self.config.target_resolution
        out_res = self._output_resolution(resolution)
        if out_res not in self.block_resolutions():
            raise ResolutionNotInSchedule(
                f"resolution {resolution} not in schedule {self.block_resolutions()}"
            )
        if not 0.0 <= alpha <= 1.0:
            raise ConfigInvalid(f"fade-in weight must be in [0, 1], got {alpha}")
        w = self.map_latent(z)
        base = self.config.base_resolution
        const = self.params["const"]
        x = tc.broadcast_to(const, (z.shape[0],) + const.shape)
        previous = None
        for r in self.block_resolutions():
            if r > out_res:
                break
            previous = x
            x = self._block(x, r, w, noise_stream)
        if out_res > base and alpha < 1.0:
            low = self._to_rgb(previous, out_res // 2)
            hi = self._to_rgb(x, out_res)
            a = Tensor(np.float32(alpha))
            one_minus = Tensor(np.float32(1.0 - alpha))
            return tc.add(tc.mul(a, hi), tc.mul(one_minus, tc.nearest_up2(low)))
        return self._to_rgb(x, out_res)

    def generate_upscaled(self, z: Tensor, resolution: int | None = None, alpha: float = 1.0,
                          noise_stream: RandomStream | None = None):
        """Resolution-increase variant: return (full 2R image, stride-2
        subsampled R view for the critic)."""
        if self.config.variant != VARIANT_RESOLUTION_INCREASE:
            raise VariantDisabled("generator was built without the resolution-increase variant")
        full = self.generate(z, resolution, alpha, noise_stream)
        return full, tc.strided_sample(full, 2)

    def critic_view(self, z, resolution=None, alpha=1.0, noise_stream=None) -> Tensor:
        """The image the critic scores: plain output, or the subsampled view."""
        if self.config.variant == VARIANT_RESOLUTION_INCREASE:
            return self.generate_upscaled(z, resolution, alpha, noise_stream)[1]
        return self.generate(z, resolution, alpha, noise_stream)


# ---------------------------------------------------------------------------
# discriminator (critic)
# ---------------------------------------------------------------------------


class Discriminator:
    def __init__(self, config: DiscriminatorConfig, init_stream: RandomStream | None = None):
        self.config = config
        self.params = ParamStore()
        stream = init_stream if init_stream is not None else RandomStream(0).split("init_d")
        ch = config.channels

        def gaussian(shape, fan_in):
            return stream.normal(shape, dtype=np.float32) / np.float32(np.sqrt(fan_in))

        for r in config.block_resolutions():
            c = ch[r]
            self.params.add(f"b{r}/rgb/k", gaussian((c, 1, 1, 1), 1))
            self.params.add(f"b{r}/rgb/b", np.zeros(c, dtype=np.float32))
            self.params.add(f"b{r}/rgbA/k", gaussian((c, c, 3, 3), c * 9))
            self.params.add(f"b{r}/rgbA/b", np.zeros(c, dtype=np.float32))
            self.params.add(f"b{r}/rgbB/k", gaussian((c, c, 3, 3), c * 9))
            self.params.add(f"b{r}/rgbB/b", np.zeros(c, dtype=np.float32))
            self.params.add(f"b{r}/ds1/k", gaussian((c, c, 3, 3), c * 9))
            self.params.add(f"b{r}/ds1/b", np.zeros(c, dtype=np.float32))
            self.params.add(f"b{r}/ds2/k", gaussian((ch[r // 2], c, 3, 3), c * 9))
            self.params.add(f"b{r}/ds2/b", np.zeros(ch[r // 2], dtype=np.float32))
        c4 = ch[4]
        self.params.add("final/conv4/k", gaussian((c4, c4 + 1, 4, 4), (c4 + 1) * 16))
        self.params.add("final/conv4/b", np.zeros(c4, dtype=np.float32))
        self.params.add("final/conv3/k", gaussian((c4, c4, 3, 3), c4 * 9))
        self.params.add("final/conv3/b", np.zeros(c4, dtype=np.float32))
        self.params.add("final/dense/w", gaussian((c4, 1), c4))
        self.params.add("final/dense/b", np.zeros(1, dtype=np.float32))

    def _from_rgb(self, x: Tensor, r: int) -> Tensor:
        p = self.params
        h = _lrelu(_bias4(tc.conv2d(x, p[f"b{r}/rgb/k"], 1, 0), p[f"b{r}/rgb/b"]))
        h = _lrelu(_bias4(tc.conv2d(h, p[f"b{r}/rgbA/k"], 1, 1), p[f"b{r}/rgbA/b"]))
        return _lrelu(_bias4(tc.conv2d(h, p[f"b{r}/rgbB/k"], 1, 1), p[f"b{r}/rgbB/b"]))

    def _down_block(self, x: Tensor, r: int) -> Tensor:
        p = self.params
        x = tc.avg_pool2(x)
        x = pixel_norm(x)
        x = _lrelu(_bias4(tc.conv2d(x, p[f"b{r}/ds1/k"], 1, 1), p[f"b{r}/ds1/b"]))
        x = pixel_norm(x)
        return _lrelu(_bias4(tc.conv2d(x, p[f"b{r}/ds2/k"], 1, 1), p[f"b{r}/ds2/b"]))

    def score(self, x: Tensor, alpha: float = 1.0) -> Tensor:
        """Raw (unsquashed) critic score, one per batch sample."""
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != x.shape[3]:
            raise ResolutionMismatch(f"critic input must be (b, 1, r, r), got {x.shape}")
        r = x.shape[2]
        schedule = self.config.block_resolutions()
        if r not in schedule:
            raise ResolutionMismatch(f"input resolution {r} not in schedule {schedule}")
        h = self._from_rgb(x, r)
        first = True
        q = r
        while q >= self.config.base_resolution:
            h = self._down_block(h, q)
            if first and alpha < 1.0 and q > self.config.base_resolution:
                low = self._from_rgb(tc.avg_pool2(x), q // 2)
                a = Tensor(np.float32(alpha))
                one_minus = Tensor(np.float32(1.0 - alpha))
                h = tc.add(tc.mul(a, h), tc.mul(one_minus, low))
            first = False
            q //= 2
        p = self.params
        h = batch_std(h)
        h = _lrelu(_bias4(tc.conv2d(h, p["final/conv4/k"], 1, 0), p["final/conv4/b"]))
        h = _lrelu(_bias4(tc.conv2d(h, p["final/conv3/k"], 1, 1), p["final/conv3/b"]))
        h = tc.reshape(h, (h.shape[0], h.shape[1]))
        return tc.dense(h, p["final/dense/w"], p["final/dense/b"])
