"""Adversarial losses, the alternating update loop, and checkpointing.

The critic update and the generator update alternate inside one outer
iteration: exactly `k_d` critic steps on fresh batches, then `k_g` generator
steps on fresh batches.  The default objective is the Wasserstein loss with
gradient penalty on per-sample interpolates; the classic (log-sigmoid) loss
is available for comparison.

Progressive growing walks the resolution schedule; real images at a low
phase are the training patches box-downscaled to that size.  Checkpoints
capture parameters, optimizer moments, the RNG state, and the phase, so a
resumed run continues bit-identically.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensorcore as tc
from .errors import BadTarget, ConfigInvalid, CorruptFile, VersionMismatch
from .images import PatchSet
from .rng import RandomStream
from .stylenet import (
    VARIANT_RESOLUTION_INCREASE,
    VARIANT_STANDARD,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
)
from .tensorcore import AdamState, Tensor

CHECKPOINT_MAGIC = b"MGCK"
CHECKPOINT_VERSION = 1

LOSS_CLASSIC = "classic"
LOSS_WGAN_GP = "wgan_gp"

_LOG_FLOOR = 1e-7


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def classic_gan_losses(d_real: Tensor, d_fake: Tensor):
    """Non-saturating GAN losses on sigmoid-squashed discriminator outputs.

    `d_real`/`d_fake` must already lie in (0, 1); log arguments are floored
    at 1e-7.  Returns (loss_d, loss_g).
    """
    pr = tc.clamp_min(d_real, _LOG_FLOOR)
    qf = tc.clamp_min(tc.sub(1.0, d_fake), _LOG_FLOOR)
    pf = tc.clamp_min(d_fake, _LOG_FLOOR)
    loss_d = tc.neg(tc.add(tc.mean(tc.log(pr)), tc.mean(tc.log(qf))))
    loss_g = tc.neg(tc.mean(tc.log(pf)))
    return loss_d, loss_g


def wgan_gp_losses(critic, real: Tensor, fake: Tensor, eps=None, gp_lambda: float = 10.0):
    """Wasserstein critic/generator losses with gradient penalty.

    Parameters
    ----------
    critic : callable Tensor -> Tensor
        Maps a (b, 1, h, w) batch to raw scores (b, 1).
    real, fake : Tensors
        Real batch and generator output (treated as constants here).
    eps : (b, 1, 1, 1) array of U[0, 1] draws, or None when gp_lambda == 0
        Per-sample interpolation weights for x_hat = eps*fake + (1-eps)*real.
    gp_lambda : penalty coefficient; 0 disables the penalty term.

    Returns (loss_d, loss_g, aux) where aux holds float diagnostics:
    `w_estimate` = mean critic(real) - mean critic(fake), and `penalty`.
    """
    s_real = critic(real)
    s_fake = critic(fake)
    loss_d = tc.sub(tc.mean(s_fake), tc.mean(s_real))
    penalty_value = 0.0
    if gp_lambda > 0.0:
        if eps is None:
            raise ConfigInvalid("gradient penalty requires interpolation draws")
        eps = np.asarray(eps, dtype=real.dtype).reshape(real.shape[0], 1, 1, 1)
        mix = eps * fake.data + (1.0 - eps) * real.data
        x_hat = Tensor(mix, requires_grad=True)
        s_hat = critic(x_hat)
        (gx,) = tc.grad(tc.sum_axes(s_hat), [x_hat], create_graph=True)
        sq = tc.sum_axes(tc.mul(gx, gx), axes=(1, 2, 3))
        norm = tc.sqrt(tc.add(sq, 1e-12))
        gap = tc.sub(norm, 1.0)
        penalty = tc.mean(tc.mul(gap, gap))
        penalty_value = penalty.item()
        loss_d = tc.add(loss_d, tc.mul(float(gp_lambda), penalty))
    loss_g = tc.neg(tc.mean(s_fake))
    aux = {
        "w_estimate": float(s_real.data.mean() - s_fake.data.mean()),
        "penalty": float(penalty_value),
    }
    return loss_d, loss_g, aux


def schedule_resolutions(start: int = 8, target: int = 128, progressive: bool = True):
    """Doubling resolution phases [start, ..., target]; just [target] when
    progressive growing is disabled."""
    if target < start or target & (target - 1) or start & (start - 1) or start < 8:
        raise BadTarget(f"target must be a power of two >= {start}, got {target}")
    if not progressive:
        return [target]
    out = []
    r = start
    while r <= target:
        out.append(r)
        r *= 2
    return out


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    loss_kind: str = LOSS_WGAN_GP
    target_resolution: int = 128
    progressive: bool = True
    variant: str = VARIANT_STANDARD
    iterations: int = 1000      # outer iterations per phase
    batch: int = 16
    k_d: int = 1
    k_g: int = 1
    gp_lambda: float = 10.0
    lr: float = 0.001
    lr_final_phase: float = 0.0015   # applied once the phase reaches 128
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    fade_images: int = 4096     # images over which alpha ramps 0 -> 1
    latent_dim: int = 64
    mapping_depth: int = 4
    channels: dict = field(default_factory=lambda: None)
    seed: int = 0

    def validate(self):
        if self.loss_kind not in (LOSS_CLASSIC, LOSS_WGAN_GP):
            raise ConfigInvalid(f"unknown loss kind {self.loss_kind!r}")
        if self.batch < 1 or self.k_d < 1 or self.k_g < 1:
            raise ConfigInvalid("batch, k_d, and k_g must be >= 1")
        if self.gp_lambda < 0:
            raise ConfigInvalid("gp_lambda must be >= 0")
        if self.iterations < 0:
            raise ConfigInvalid("iterations must be >= 0")
        schedule_resolutions(8, self.target_resolution, self.progressive)

    def phases(self):
        return schedule_resolutions(8, self.target_resolution, self.progressive)

    def generator_config(self) -> GeneratorConfig:
        kwargs = dict(
            target_resolution=self.target_resolution,
            latent_dim=self.latent_dim,
            mapping_depth=self.mapping_depth,
            variant=self.variant,
        )
        if self.channels:
            kwargs["channels"] = dict(self.channels)
        return GeneratorConfig(**kwargs)

    def discriminator_config(self) -> DiscriminatorConfig:
        kwargs = dict(target_resolution=self.target_resolution)
        if self.channels:
            kwargs["channels"] = dict(self.channels)
        return DiscriminatorConfig(**kwargs)


@dataclass
class Checkpoint:
    """Everything needed to continue training bit-identically."""

    iteration: int              # completed outer iterations (global)
    phase_resolution: int
    alpha: float
    rng_state: bytes            # 16 bytes
    params: dict                # name -> float32 ndarray ("G/..." / "D/...")
    version: int = CHECKPOINT_VERSION


@dataclass
class TraceRow:
    iteration: int
    phase: int
    loss_d: float
    loss_g: float
    w_estimate: float


def write_trace(rows, path) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("iter,phase,loss_d,loss_g,w_estimate\n")
        for r in rows:
            fh.write(f"{r.iteration},{r.phase},{r.loss_d:.6e},{r.loss_g:.6e},{r.w_estimate:.6e}\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# data helpers
# ---------------------------------------------------------------------------


def to_signed_unit(patches_u8: np.ndarray) -> np.ndarray:
    """uint8 intensities -> float32 in [-1, 1]."""
    return (patches_u8.astype(np.float32) / 127.5) - 1.0


def from_signed_unit(batch: np.ndarray) -> np.ndarray:
    """Clamp a [-1, 1] batch back to uint8 intensities."""
    return np.clip(np.rint((batch + 1.0) * 127.5), 0, 255).astype(np.uint8)


def box_downscale(batch: np.ndarray, resolution: int) -> np.ndarray:
    """Repeated 2x2 box averaging down to `resolution` (float32 batch)."""
    out = batch
    while out.shape[-1] > resolution:
        out = 0.25 * (
            out[..., ::2, ::2] + out[..., 1::2, ::2] + out[..., ::2, 1::2] + out[..., 1::2, 1::2]
        )
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


class TrainSession:
    """Owns the models, optimizers, and RNG for one training run."""

    def __init__(self, config: TrainConfig, patches: PatchSet):
        config.validate()
        if patches.patch_size != config.target_resolution:
            raise ConfigInvalid(
                f"patch size {patches.patch_size} must equal the target resolution "
                f"{config.target_resolution}"
            )
        self.config = config
        self.patches = patches
        root = RandomStream(config.seed)
        self.generator = Generator(config.generator_config(), root.split("init_g"))
        self.discriminator = Discriminator(config.discriminator_config(), root.split("init_d"))
        self.opt_g = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
        self.opt_d = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
        self.stream = root.split("train")
        self.iteration = 0
        self.trace: list[TraceRow] = []
        self._data = to_signed_unit(patches.patches)

    # -- checkpoint plumbing ------------------------------------------------

    def snapshot(self, phase_resolution: int, alpha: float) -> Checkpoint:
        params = {}
        for name, t in self.generator.params.items():
            params[f"G/{name}"] = t.data.copy()
        for name, t in self.discriminator.params.items():
            params[f"D/{name}"] = t.data.copy()
        for prefix, opt in (("optG", self.opt_g), ("optD", self.opt_d)):
            params[f"{prefix}/t"] = np.float32(opt.t)
            for name, m in opt.m.items():
                params[f"{prefix}/{name}/m"] = m.copy()
                params[f"{prefix}/{name}/v"] = opt.v[name].copy()
        return Checkpoint(
            iteration=self.iteration,
            phase_resolution=phase_resolution,
            alpha=float(alpha),
            rng_state=self.stream.state_bytes(),
            params=params,
        )

    def restore(self, ckpt: Checkpoint) -> None:
        g_arrays = {n[2:]: v for n, v in ckpt.params.items() if n.startswith("G/")}
        d_arrays = {n[2:]: v for n, v in ckpt.params.items() if n.startswith("D/")}
        self.generator.params.load_state_arrays(g_arrays)
        self.discriminator.params.load_state_arrays(d_arrays)
        for prefix, opt in (("optG", self.opt_g), ("optD", self.opt_d)):
            opt.t = int(round(float(ckpt.params[f"{prefix}/t"])))
            opt.m.clear()
            opt.v.clear()
            head = prefix + "/"
            for name, value in ckpt.params.items():
                if name.startswith(head) and name.endswith("/m"):
                    opt.m[name[len(head):-2]] = np.array(value, dtype=np.float32)
                elif name.startswith(head) and name.endswith("/v"):
                    opt.v[name[len(head):-2]] = np.array(value, dtype=np.float32)
        self.stream = RandomStream.from_state_bytes(ckpt.rng_state)
        self.iteration = ckpt.iteration

    # -- batch construction ---------------------------------------------------

    def _real_batch(self, resolution: int) -> Tensor:
        idx = self.stream.integers(self.patches.count, (self.config.batch,))
        batch = self._data[idx][:, None, :, :]
        return Tensor(box_downscale(batch, resolution))

    def _latents(self) -> Tensor:
        return Tensor(self.stream.normal((self.config.batch, self.config.latent_dim), np.float32))

    def _fake_batch(self, resolution: int, alpha: float) -> Tensor:
        """Critic-view generator output, detached from the generator graph."""
        with tc.no_grad():
            z = self._latents()
            img = self.generator.critic_view(z, resolution, alpha, self.stream)
        return Tensor(img.data)

    # -- updates ------------------------------------------------------------------

    def _critic_update(self, resolution: int, alpha: float):
        cfg = self.config
        real = self._real_batch(resolution)
        fake = self._fake_batch(resolution, alpha)
        critic = lambda x: self.discriminator.score(x, alpha)
        self.discriminator.params.zero_grads()
        if cfg.loss_kind == LOSS_WGAN_GP:
            eps = self.stream.uniform((cfg.batch,))
            loss_d, _, aux = wgan_gp_losses(critic, real, fake, eps, cfg.gp_lambda)
            w_estimate = aux["w_estimate"]
        else:
            s_real, s_fake = critic(real), critic(fake)
            loss_d, _ = classic_gan_losses(tc.sigmoid(s_real), tc.sigmoid(s_fake))
            w_estimate = float(s_real.data.mean() - s_fake.data.mean())
        tc.backward(loss_d)
        tc.adam_step(self.discriminator.params, self.opt_d)
        return float(loss_d.item()), w_estimate

    def _generator_update(self, resolution: int, alpha: float):
        cfg = self.config
        z = self._latents()
        self.generator.params.zero_grads()
        img = self.generator.critic_view(z, resolution, alpha, self.stream)
        scores = self.discriminator.score(img, alpha)
        if cfg.loss_kind == LOSS_WGAN_GP:
            loss_g = tc.neg(tc.mean(scores))
        else:
            pf = tc.clamp_min(tc.sigmoid(scores), _LOG_FLOOR)
            loss_g = tc.neg(tc.mean(tc.log(pf)))
        tc.backward(loss_g)
        tc.adam_step(self.generator.params, self.opt_g)
        return float(loss_g.item())

    def _alpha(self, phase_index: int, iter_in_phase: int) -> float:
        if phase_index == 0 or self.config.fade_images <= 0:
            return 1.0
        images = iter_in_phase * self.config.batch
        return min(1.0, images / float(self.config.fade_images))

    # -- main loop ---------------------------------------------------------------

    def run(self, on_update=None):
        """Execute all remaining iterations; returns the final Checkpoint.

        `on_update(kind, iteration, session)` fires after every inner update
        ("critic" or "generator") — a monitoring hook.
        """
        cfg = self.config
        phases = cfg.phases()
        per_phase = cfg.iterations
        total = per_phase * len(phases)
        alpha = 1.0
        while self.iteration < total:
            phase_index = self.iteration // per_phase if per_phase else 0
            res = phases[phase_index]
            iter_in_phase = self.iteration - phase_index * per_phase
            alpha = self._alpha(phase_index, iter_in_phase)
            lr = cfg.lr_final_phase if res >= 128 else cfg.lr
            self.opt_d.lr = lr
            self.opt_g.lr = lr
            loss_d = w_est = 0.0
            for _ in range(cfg.k_d):
                loss_d, w_est = self._critic_update(res, alpha)
                if on_update:
                    on_update("critic", self.iteration, self)
            loss_g = 0.0
            for _ in range(cfg.k_g):
                loss_g = self._generator_update(res, alpha)
                if on_update:
                    on_update("generator", self.iteration, self)
            self.iteration += 1
            self.trace.append(TraceRow(self.iteration, res, loss_d, loss_g, w_est))
        final_res = phases[-1] if phases else cfg.target_resolution
        return self.snapshot(final_res, alpha)


def train(config: TrainConfig, patches: PatchSet, resume: Checkpoint | None = None,
          on_update=None):
    """Train per the config; returns (session, checkpoint).

    With `resume`, parameters, optimizer state, RNG, and the iteration
    counter are restored first, and only the remaining iterations run.
    """
    session = TrainSession(config, patches)
    if resume is not None:
        session.restore(resume)
    ckpt = session.run(on_update=on_update)
    return session, ckpt


# ---------------------------------------------------------------------------
# checkpoint serialization (magic "MGCK")
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Layout: magic, u32 version, u64 iteration, u32 phase, f32 alpha,
    16-byte RNG state, u32 entry count, then entries
    {u16 name length, name, u8 rank, u32 dims..., f32 payload}, little-endian.
    Writes are atomic (temp file + rename)."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack(
        "<IQIf", ckpt.version, ckpt.iteration, ckpt.phase_resolution, ckpt.alpha
    )
    blob += ckpt.rng_state
    blob += struct.pack("<I", len(ckpt.params))
    for name, value in ckpt.params.items():
        arr = np.asarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if len(raw) < 4 + 17 + 16 + 4 or raw[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint")
    pos = 4
    version, iteration, phase, alpha = struct.unpack_from("<IQIf", view, pos)
    pos += struct.calcsize("<IQIf")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}")
    rng_state = bytes(view[pos : pos + 16])
    pos += 16
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    params = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", view, pos) if rank else ()
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(view, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            params[name] = payload.reshape(dims).copy() if rank else np.float32(payload[0])
    except (struct.error, ValueError) as exc:
        raise CorruptFile(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise CorruptFile(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(
        iteration=iteration,
        phase_resolution=phase,
        alpha=alpha,
        rng_state=rng_state,
        params=params,
        version=version,
    )
