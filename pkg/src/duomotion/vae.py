"""Sequence variational autoencoder for paired motion.

The encoder prepends n learnable latent query tokens to the projected
frame tokens; the transformer output at those slots parameterizes a
Gaussian posterior over an (n x d) latent grid. The decoder seeds the
latent tokens in front of L zero tokens and reads the reconstruction off
the motion slots. Both stacks use long skip connections pairing layer i
with layer (layers-1-i) (concat + linear, initialized as pass-through).

Training minimizes reconstruction MSE and KL in normalized space plus
three geometric terms computed on denormalized positions: velocity MSE,
per-frame bone-length MSE, and squared foot speed on frames whose ground
truth says the foot is planted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .motion import NormalizationStats, SkeletonSpec, get_skeleton
from .nn import LayerNorm, Linear, Module, Parameter, TransformerBlock, sinusoidal_positions, trunc_normal
from .optim import Adam, cosine_lr
from .seeding import rng_for


@dataclass
class VAEConfig:
    feature_width: int
    latent_tokens: int = 8
    latent_dim: int = 32
    d_model: int = 128
    layers: int = 9
    heads: int = 4
    mlp_ratio: float = 4.0
    skip_connections: bool = True
    w_mse: float = 1.0
    w_kl: float = 1e-4
    w_vel: float = 1.0
    w_bone: float = 1.0
    w_fc: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.latent_tokens < 1:
            raise ValueError("latent_tokens must be >= 1")


def compression_ratio(config: VAEConfig, frames: int) -> float:
    """Latent size over raw size for one sequence."""
    return (config.latent_tokens * config.latent_dim) / (frames * config.feature_width)


class _SkipStack(Module):
    """Transformer stack with U-style long skips over depth."""

    def __init__(self, config: VAEConfig, rng, dtype):
        super().__init__()
        self.layers = config.layers
        self.pairs = config.layers // 2 if config.skip_connections else 0
        self.blocks = [TransformerBlock(config.d_model, config.heads, rng, dtype,
                                        mlp_ratio=config.mlp_ratio)
                       for _ in range(config.layers)]
        fusers = []
        for _ in range(self.pairs):
            fuse = Linear(2 * config.d_model, config.d_model, rng, dtype)
            # pass-through init: keep the running stream, ignore the skip until trained
            w = np.zeros((2 * config.d_model, config.d_model), dtype=dtype)
            w[:config.d_model] = np.eye(config.d_model, dtype=dtype)
            fuse.weight.data = w
            fusers.append(fuse)
        self.fusers = fusers

    def __call__(self, x: Tensor) -> Tensor:
        stash = []
        for i, block in enumerate(self.blocks):
            if i >= self.layers - self.pairs:
                skip = stash.pop()
                x = self.fusers[i - (self.layers - self.pairs)](ad.concat([x, skip], axis=-1))
            x = block(x)
            if len(stash) < self.pairs and i < self.pairs:
                stash.append(x)
        return x


class SequenceVAE(Module):
    def __init__(self, config: VAEConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = dtype
        rng = rng_for(seed, "vae-init")
        c = config
        self.latent_queries = Parameter(trunc_normal(rng, (c.latent_tokens, c.d_model), dtype=dtype))
        self.in_proj = Linear(c.feature_width, c.d_model, rng, dtype)
        self.encoder = _SkipStack(c, rng, dtype)
        self.enc_norm = LayerNorm(c.d_model, dtype)
        self.mu_head = Linear(c.d_model, c.latent_dim, rng, dtype)
        self.logvar_head = Linear(c.d_model, c.latent_dim, rng, dtype)
        self.z_proj = Linear(c.latent_dim, c.d_model, rng, dtype)
        self.decoder = _SkipStack(c, rng, dtype)
        self.dec_norm = LayerNorm(c.d_model, dtype)
        self.out_proj = Linear(c.d_model, c.feature_width, rng, dtype)
        self._pos_cache: dict[int, np.ndarray] = {}

    def _positions(self, length: int) -> np.ndarray:
        if length not in self._pos_cache:
            self._pos_cache[length] = sinusoidal_positions(
                length, self.config.d_model, dtype=self.dtype)[None]
        return self._pos_cache[length]

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """(B, L, W) normalized features -> posterior (mu, logvar), each (B, n, d)."""
        if x.shape[-1] != self.config.feature_width:
            raise ValueError(f"feature width {x.shape[-1]} != config {self.config.feature_width}")
        b, length, _ = x.shape
        n = self.config.latent_tokens
        queries = ad.add(ad.reshape(self.latent_queries, (1, n, self.config.d_model)),
                         Tensor(np.zeros((b, n, self.config.d_model), dtype=self.dtype)))
        tokens = ad.concat([queries, self.in_proj(x)], axis=1)
        tokens = ad.add(tokens, Tensor(self._positions(n + length)))
        h = self.enc_norm(self.encoder(tokens))
        latent_slots = h[:, :n, :]
        return self.mu_head(latent_slots), self.logvar_head(latent_slots)

    def decode(self, z: Tensor, length: int) -> Tensor:
        """(B, n, d) latent grid -> (B, length, W) normalized reconstruction."""
        if length < 2:
            raise ValueError("decode needs length >= 2")
        if z.shape[-2:] != (self.config.latent_tokens, self.config.latent_dim):
            raise ValueError(f"latent shape {z.shape[-2:]} != "
                             f"({self.config.latent_tokens}, {self.config.latent_dim})")
        b = z.shape[0]
        n = self.config.latent_tokens
        heads = self.z_proj(z)
        zeros = Tensor(np.zeros((b, length, self.config.d_model), dtype=self.dtype))
        tokens = ad.add(ad.concat([heads, zeros], axis=1), Tensor(self._positions(n + length)))
        h = self.dec_norm(self.decoder(tokens))
        return self.out_proj(h[:, n:, :])


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I); differentiable in mu, logvar."""
    eps = rng.standard_normal(mu.shape).astype(mu.data.dtype)
    return ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, 0.5)), Tensor(eps)))


# -- losses ---------------------------------------------------------------------


def _parent_gather(skeleton: SkeletonSpec, dtype) -> np.ndarray:
    """(J, J-1) one-hot matrix selecting each non-root joint's parent."""
    j = skeleton.joint_count
    g = np.zeros((j, j - 1), dtype=dtype)
    for child in range(1, j):
        g[skeleton.parents[child], child - 1] = 1.0
    return g


def _foot_gather(skeleton: SkeletonSpec, dtype) -> np.ndarray:
    j = skeleton.joint_count
    g = np.zeros((j, skeleton.foot_count), dtype=dtype)
    for col, joint in enumerate(skeleton.foot_joints):
        g[joint, col] = 1.0
    return g


def _person_positions(features: Tensor, skeleton: SkeletonSpec, person: int) -> Tensor:
    """Slice one person's (B, L, J, 3) positions out of a (B, L, 2*D_p) tensor."""
    width = skeleton.person_width
    off = person * width
    b, length, _ = features.shape
    pos = features[:, :, off:off + 3 * skeleton.joint_count]
    return ad.reshape(pos, (b, length, skeleton.joint_count, 3))


def _select_joints(pos: Tensor, gather: np.ndarray) -> Tensor:
    # (B, L, J, 3) -> (B, L, K, 3) via one-hot matmul (keeps everything on the tape)
    moved = ad.transpose(pos, (0, 1, 3, 2))
    picked = ad.matmul(moved, Tensor(gather))
    return ad.transpose(picked, (0, 1, 3, 2))


@dataclass
class VAELossBreakdown:
    mse: float
    kl: float
    vel: float
    bone: float
    fc: float
    total: float
    weights: dict = field(default_factory=dict)


def vae_loss(recon_n: Tensor, target_n: np.ndarray, mu: Tensor, logvar: Tensor,
             stats: NormalizationStats, skeleton: SkeletonSpec,
             config: VAEConfig) -> tuple[Tensor, VAELossBreakdown]:
    """Weighted total of the five training terms.

    MSE/KL are taken in normalized space; the geometric terms act on
    denormalized positions. Returns the differentiable total plus a float
    breakdown for logging.
    """
    dtype = recon_n.data.dtype
    diff = ad.add(recon_n, Tensor(-target_n))
    mse = ad.tmean(ad.mul(diff, diff))
    kl = ad.tmean(ad.mul(ad.add(ad.add(ad.exp(logvar), ad.mul(mu, mu)),
                                ad.add(ad.mul(logvar, -1.0), -1.0)), 0.5))

    std = Tensor(stats.std.astype(dtype))
    mean = Tensor(stats.mean.astype(dtype))
    recon_d = ad.add(ad.mul(recon_n, std), mean)
    target_d = (np.asarray(target_n, dtype=np.float64) * stats.std + stats.mean).astype(dtype)

    parent = _parent_gather(skeleton, dtype)
    feet = _foot_gather(skeleton, dtype)
    vel_terms, bone_terms, fc_num, fc_den = [], [], [], 0.0
    b, length, _ = recon_n.shape
    for person in (0, 1):
        pos = _person_positions(recon_d, skeleton, person)
        gt_pos = target_d[:, :, person * skeleton.person_width:][:, :, :3 * skeleton.joint_count]
        gt_pos = gt_pos.reshape(b, length, skeleton.joint_count, 3)

        vel = ad.add(pos[:, 1:], ad.mul(pos[:, :-1], -1.0))
        gt_vel = gt_pos[:, 1:] - gt_pos[:, :-1]
        dv = ad.add(vel, Tensor(-gt_vel))
        vel_terms.append(ad.tmean(ad.mul(dv, dv)))

        bones = ad.add(pos[:, :, 1:, :], ad.mul(_select_joints(pos, parent), -1.0))
        lengths = ad.sqrt(ad.add(ad.tsum(ad.mul(bones, bones), axis=3), 1e-12))
        gt_bones = gt_pos[:, :, 1:, :] - gt_pos[:, :, np.asarray(skeleton.parents[1:]), :]
        gt_len = np.sqrt((gt_bones * gt_bones).sum(axis=3) + 1e-12)
        dl = ad.add(lengths, Tensor(-gt_len))
        bone_terms.append(ad.tmean(ad.mul(dl, dl)))

        foot_pos = _select_joints(pos, feet)
        foot_vel = ad.add(foot_pos[:, 1:], ad.mul(foot_pos[:, :-1], -1.0))
        speed_sq = ad.tsum(ad.mul(foot_vel, foot_vel), axis=3)
        off = person * skeleton.person_width + 12 * skeleton.joint_count
        mask = np.asarray(target_n, dtype=np.float64)[:, 1:, off:off + skeleton.foot_count]
        # contacts are 0/1 and untouched by normalization only if channel is constant;
        # recover the raw labels from the stats instead
        mask = (mask * stats.std[off:off + skeleton.foot_count]
                + stats.mean[off:off + skeleton.foot_count])
        mask = (mask > 0.5).astype(dtype)
        fc_num.append(ad.tsum(ad.mul(speed_sq, Tensor(mask))))
        fc_den += float(mask.sum())

    vel = ad.mul(ad.add(vel_terms[0], vel_terms[1]), 0.5)
    bone = ad.mul(ad.add(bone_terms[0], bone_terms[1]), 0.5)
    fc = ad.mul(ad.add(fc_num[0], fc_num[1]), 1.0 / max(fc_den, 1.0))

    c = config
    total = ad.add(ad.add(ad.add(ad.mul(mse, c.w_mse), ad.mul(kl, c.w_kl)),
                          ad.add(ad.mul(vel, c.w_vel), ad.mul(bone, c.w_bone))),
                   ad.mul(fc, c.w_fc))
    breakdown = VAELossBreakdown(
        mse=mse.item(), kl=kl.item(), vel=vel.item(), bone=bone.item(), fc=fc.item(),
        total=total.item(),
        weights={"mse": c.w_mse, "kl": c.w_kl, "vel": c.w_vel, "bone": c.w_bone, "fc": c.w_fc})
    return total, breakdown


def mpjpe(recon_d: np.ndarray, target_d: np.ndarray, skeleton: SkeletonSpec) -> float:
    """Mean per-joint position error in bone-length units (mean rest bone)."""
    b, length, _ = recon_d.shape
    errs = []
    for person in (0, 1):
        off = person * skeleton.person_width
        a = recon_d[:, :, off:off + 3 * skeleton.joint_count].reshape(b, length, -1, 3)
        g = target_d[:, :, off:off + 3 * skeleton.joint_count].reshape(b, length, -1, 3)
        errs.append(np.linalg.norm(a - g, axis=-1))
    return float(np.mean(errs) / skeleton.mean_bone_length)


# -- training ---------------------------------------------------------------------


@dataclass
class VAETrainResult:
    model: SequenceVAE
    stats: NormalizationStats
    history: list
    aborted: bool = False


def train_vae(samples: list, config: VAEConfig, epochs: int, seed: int,
              batch_size: int = 32, lr: float = 3e-4, stats: NormalizationStats | None = None,
              start_epoch: int = 0, model: SequenceVAE | None = None,
              optimizer: Adam | None = None, log=None) -> VAETrainResult:
    """Adam training of the five-term objective; deterministic given seed.

    Divergence (non-finite total loss) aborts and restores the last
    completed epoch's parameters.
    """
    skeleton = samples[0].sequence.skeleton
    if stats is None:
        stats = NormalizationStats.from_sequences([s.sequence for s in samples])
    data = np.stack([stats.normalize(s.sequence.features) for s in samples])
    model = model or SequenceVAE(config, seed=seed)
    optimizer = optimizer or Adam(model.parameters(), lr=lr)
    reparam_rng = rng_for(seed, "vae-reparam")
    steps_per_epoch = max(1, int(np.ceil(len(samples) / batch_size)))
    total_steps = epochs * steps_per_epoch
    history = []
    last_good = {k: v.copy() for k, v in model.state_arrays().items()}

    for epoch in range(start_epoch, epochs):
        order = rng_for(seed, f"vae-shuffle-{epoch}").permutation(len(samples))
        sums = np.zeros(6)
        t0 = time.perf_counter()
        for step in range(steps_per_epoch):
            batch = data[order[step * batch_size:(step + 1) * batch_size]]
            optimizer.lr = cosine_lr(lr, epoch * steps_per_epoch + step, total_steps)
            optimizer.zero_grad()
            mu, logvar = model.encode(Tensor(batch))
            z = reparameterize(mu, logvar, reparam_rng)
            recon = model.decode(z, batch.shape[1])
            total, parts = vae_loss(recon, batch, mu, logvar, stats, skeleton, config)
            if not np.isfinite(parts.total):
                model.load_state_arrays(last_good)
                return VAETrainResult(model, stats, history, aborted=True)
            total.backward()
            optimizer.step()
            sums += np.array([parts.mse, parts.kl, parts.vel, parts.bone, parts.fc, parts.total])
        wall = time.perf_counter() - t0
        row = {"epoch": epoch, "mse": sums[0] / steps_per_epoch, "kl": sums[1] / steps_per_epoch,
               "vel": sums[2] / steps_per_epoch, "bone": sums[3] / steps_per_epoch,
               "fc": sums[4] / steps_per_epoch, "total": sums[5] / steps_per_epoch,
               "wall_time": wall}
        history.append(row)
        last_good = {k: v.copy() for k, v in model.state_arrays().items()}
        if log:
            log(row)
    return VAETrainResult(model, stats, history, aborted=False)


# -- checkpointing ------------------------------------------------------------------


def save_vae_checkpoint(path: str, model: SequenceVAE, stats: NormalizationStats,
                        skeleton: SkeletonSpec, epoch: int, optimizer: Adam | None = None,
                        extra: dict | None = None):
    config = {
        "kind": "vae",
        "vae": asdict(model.config),
        "skeleton": skeleton.name,
        "epoch": epoch,
    }
    if extra:
        config.update(extra)
    tensors = dict(model.state_arrays())
    tensors["stats.mean"] = stats.mean
    tensors["stats.std"] = stats.std
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
    save_checkpoint(path, config, tensors)


def load_vae_checkpoint(path: str) -> tuple[SequenceVAE, NormalizationStats, SkeletonSpec, dict]:
    config, tensors = load_checkpoint(path)
    if config.get("kind") != "vae":
        raise ValueError(f"{path} is not a VAE checkpoint (kind={config.get('kind')!r})")
    model = SequenceVAE(VAEConfig(**config["vae"]))
    model.load_state_arrays({k: v for k, v in tensors.items()
                             if not k.startswith(("stats.", "adam."))})
    stats = NormalizationStats(tensors["stats.mean"], tensors["stats.std"])
    skeleton = get_skeleton(config["skeleton"])
    return model, stats, skeleton, config
