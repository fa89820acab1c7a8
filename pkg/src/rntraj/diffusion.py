"""Noise schedule, forward/reverse diffusion, losses, training, and sampling.

Steps are 1-based: n runs from 1 (least noisy) to N (standard normal). The
reverse update is ancestral: the posterior mean from the predicted noise plus
posterior-variance Gaussian noise, omitted at the final step. The printed
deterministic variant (a constant +sqrt(variance) drift) is kept behind a
flag for comparison.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .codec import decode, vectorize
from .denoiser import Denoiser, DenoiserConfig, save_checkpoint
from .errors import NonFiniteError, ShapeError, ValidationError
from .roadnet import RoadNetwork
from .trajsim import Corpus, RNTraj
from .utgraph import SegmentEmbeddingTable, UTGraph, adjacency_matrix

log = logging.getLogger(__name__)


@dataclass
class NoiseSchedule:
    """beta[1..N] plus derived alpha, cumulative alpha, and posterior variance.

    Index 0 is a sentinel: alpha_bar[0] = 1 so the posterior variance at the
    first step is exactly zero.
    """

    beta: np.ndarray  # (N+1,), beta[0] unused
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.beta.shape[0] - 1

    def check_step(self, n: int) -> None:
        if not 1 <= n <= self.n_steps:
            raise ValidationError(f"step {n} outside [1, {self.n_steps}]")


def quadratic_schedule(n_steps: int, beta1: float, beta_n: float) -> NoiseSchedule:
    """Quadratic blend of sqrt(beta) endpoints, oriented so beta[1] == beta1."""
    if n_steps < 2:
        raise ValidationError(f"need at least 2 steps, got {n_steps}")
    if not 0.0 < beta1 < beta_n < 1.0:
        raise ValidationError(f"need 0 < beta1 < betaN < 1, got {beta1}, {beta_n}")
    n = np.arange(0, n_steps + 1, dtype=np.float64)
    w = (n - 1.0) / (n_steps - 1.0)
    beta = ((1.0 - w) * math.sqrt(beta1) + w * math.sqrt(beta_n)) ** 2
    beta[0] = np.nan
    beta[1] = beta1
    beta[n_steps] = beta_n
    alpha = 1.0 - beta
    alpha_bar = np.empty_like(beta)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(alpha[1:])
    posterior_var = np.empty_like(beta)
    posterior_var[0] = np.nan
    posterior_var[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return NoiseSchedule(beta, alpha, alpha_bar, posterior_var)


def _coeff(values: np.ndarray, n, like):
    """Schedule coefficient(s) at step(s) n, broadcastable against `like`."""
    if isinstance(like, torch.Tensor):
        idx = torch.as_tensor(np.asarray(n), dtype=torch.long)
        coeff = torch.as_tensor(values, dtype=like.dtype)[idx]
        if coeff.ndim == 1 and like.ndim > 1:
            coeff = coeff.reshape((-1,) + (1,) * (like.ndim - 1))
        return coeff
    coeff = values[np.asarray(n)]
    if np.ndim(coeff) == 1 and np.ndim(like) > 1:
        coeff = np.reshape(coeff, (-1,) + (1,) * (np.ndim(like) - 1))
    return coeff


def _check_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def forward_diffuse(x0, n, eps, sched: NoiseSchedule):
    """x_n = sqrt(abar_n) x0 + sqrt(1 - abar_n) eps."""
    _check_same_shape(x0, eps, "forward_diffuse")
    abar = _coeff(sched.alpha_bar, n, x0)
    if isinstance(x0, torch.Tensor):
        return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def estimate_x0(xn, eps_hat, n, sched: NoiseSchedule):
    """Algebraic inverse of forward_diffuse for the predicted noise."""
    _check_same_shape(xn, eps_hat, "estimate_x0")
    abar = _coeff(sched.alpha_bar, n, xn)
    if isinstance(xn, torch.Tensor):
        return (xn - torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(abar)
    return (xn - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)


def reverse_step(xn, eps_hat, n, z, sched: NoiseSchedule):
    """One ancestral step: posterior mean plus sqrt(posterior variance) * z."""
    _check_same_shape(xn, eps_hat, "reverse_step")
    alpha = _coeff(sched.alpha, n, xn)
    abar = _coeff(sched.alpha_bar, n, xn)
    beta = _coeff(sched.beta, n, xn)
    var = _coeff(sched.posterior_var, n, xn)
    if isinstance(xn, torch.Tensor):
        mean = (xn - beta / torch.sqrt(1.0 - abar) * eps_hat) / torch.sqrt(alpha)
        return mean + torch.sqrt(var) * z
    mean = (xn - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    return mean + np.sqrt(var) * z


def loss_l1(eps, eps_hat):
    """Mean squared error between true and predicted noise."""
    _check_same_shape(eps, eps_hat, "loss_l1")
    if isinstance(eps, torch.Tensor):
        return ((eps - eps_hat) ** 2).mean()
    return float(np.mean((np.asarray(eps) - np.asarray(eps_hat)) ** 2))


def loss_l2(x0, x0_hat):
    """Mean squared error between the clean sample and its estimate."""
    return loss_l1(x0, x0_hat)


class SpatialValidityLoss:
    """Connectivity penalty on decoded adjacent segments.

    The hard count replicates the indicator metric (no gradient); the soft
    term replaces each point's segment choice with a temperature softmax over
    its top-k most similar segments and contracts it against the adjacency.
    """

    def __init__(
        self,
        table: SegmentEmbeddingTable,
        g: UTGraph,
        temperature: float = 0.1,
        topk: int = 32,
        dtype: torch.dtype = torch.float32,
    ):
        if temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {temperature}")
        if topk < 1 or topk > table.n_segments:
            raise ValidationError(f"topk must be in [1, {table.n_segments}], got {topk}")
        self.dim = table.dim
        self.temperature = temperature
        self.topk = topk
        emb = torch.as_tensor(table.matrix, dtype=dtype)
        self.emb_normed = emb / emb.norm(dim=1, keepdim=True)
        self.adjacency = torch.as_tensor(adjacency_matrix(g, table.n_segments), dtype=dtype)

    def __call__(self, x0_hat: torch.Tensor) -> tuple[float, torch.Tensor]:
        squeeze = x0_hat.ndim == 2
        if squeeze:
            x0_hat = x0_hat.unsqueeze(0)
        x_e = x0_hat[..., : self.dim]
        x_n = x_e / x_e.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        sims = x_n @ self.emb_normed.to(x0_hat.dtype).T  # (B, T, R)

        seg = sims.argmax(dim=-1)
        hard_conn = self.adjacency.to(x0_hat.dtype)[seg[:, :-1], seg[:, 1:]]
        hard = float((1.0 - hard_conn).sum(dim=-1).mean())

        scores, idx = sims.topk(min(self.topk, sims.shape[-1]), dim=-1)
        weights = torch.softmax(scores / self.temperature, dim=-1)  # (B, T, k)
        adj_sub = self.adjacency.to(x0_hat.dtype)[
            idx[:, :-1].unsqueeze(-1), idx[:, 1:].unsqueeze(-2)
        ]  # (B, T-1, k, k)
        conn = torch.einsum("btk,btkl,btl->bt", weights[:, :-1], adj_sub, weights[:, 1:])
        soft = (1.0 - conn).sum(dim=-1).mean()
        return hard, soft


def loss_l3(
    x0_hat,
    table: SegmentEmbeddingTable,
    g: UTGraph,
    temperature: float = 0.1,
    topk: int = 32,
) -> tuple[float, float]:
    """Standalone (hard, soft) spatial validity loss; see SpatialValidityLoss."""
    x = torch.as_tensor(np.asarray(x0_hat, dtype=np.float64))
    hard, soft = SpatialValidityLoss(table, g, temperature, topk, dtype=torch.float64)(x)
    return hard, float(soft)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_halve_every: int = 3
    steps: int = 500
    beta1: float = 1e-4
    beta_n: float = 0.02
    temperature: float = 0.1
    topk: int = 32
    seed: int = 0
    use_l3: bool = True
    grad_clip: float = 0.0  # max gradient norm; 0 disables clipping
    ema_decay: float = 0.0  # weight averaging for sampling; 0 disables
    channels: int = 512
    pe_dim: int = 512
    layers: int = 8
    layers_per_block: int = 4
    kernel: int = 3

    def __post_init__(self):
        for name in ("epochs", "batch_size", "steps", "topk", "lr_halve_every",
                     "channels", "pe_dim", "layers", "layers_per_block", "kernel"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ValidationError("learning_rate and temperature must be positive")
        if self.grad_clip < 0:
            raise ValidationError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValidationError(f"ema_decay must be in [0, 1), got {self.ema_decay}")

    def denoiser_config(self, dim: int) -> DenoiserConfig:
        return DenoiserConfig(
            in_channels=dim + 1,
            channels=self.channels,
            pe_dim=self.pe_dim,
            layers=self.layers,
            layers_per_block=self.layers_per_block,
            kernel=self.kernel,
        )

    def schedule(self) -> NoiseSchedule:
        return quadratic_schedule(self.steps, self.beta1, self.beta_n)


@dataclass
class EpochStats:
    epoch: int
    l1: float
    l2: float
    l3_soft: float
    l3_hard: float
    lr: float


def write_training_log(rows: list[EpochStats], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("epoch,l1,l2,l3_soft,l3_hard,lr\n")
        for r in rows:
            f.write(f"{r.epoch},{r.l1:.6f},{r.l2:.6f},{r.l3_soft:.6f},{r.l3_hard:.6f},{r.lr:.8f}\n")


def group_by_length(corpus: Corpus, table: SegmentEmbeddingTable) -> dict[int, np.ndarray]:
    """Vectorize the corpus into per-length stacks (n, T, D+1)."""
    groups: dict[int, list[np.ndarray]] = {}
    for traj in corpus:
        groups.setdefault(len(traj), []).append(vectorize(traj, table))
    return {t: np.stack(v) for t, v in sorted(groups.items())}


def train(
    corpus: Corpus,
    net: RoadNetwork | None,
    table: SegmentEmbeddingTable,
    g: UTGraph,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    ckpt_dir: str | os.PathLike | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[Denoiser, list[EpochStats]]:
    """Train the denoiser on length-homogeneous batches; per-epoch stats out.

    Each batch element gets its own uniformly sampled step n and noise draw.
    The total loss is noise MSE + clean-sample MSE + the soft connectivity
    penalty (when enabled). Checkpoints are written per epoch when a
    directory is given.
    """
    if len(corpus) == 0:
        raise ValidationError("cannot train on an empty corpus")
    missing = [s for s in sorted(corpus.segment_universe()) if not 0 <= s < table.n_segments]
    if missing:
        raise ValidationError(f"corpus segments missing from embedding table: {missing[:5]}")
    if net is not None:
        for s in sorted(corpus.segment_universe()):
            net.segment(s)
    if sched.n_steps != cfg.steps:
        raise ValidationError(f"schedule has {sched.n_steps} steps, config says {cfg.steps}")

    model = Denoiser(cfg.denoiser_config(table.dim), dtype=dtype, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    spatial = SpatialValidityLoss(table, g, cfg.temperature, cfg.topk, dtype=dtype)
    ema = (
        {k: v.detach().clone() for k, v in model.state_dict().items()}
        if cfg.ema_decay > 0
        else None
    )

    groups = {t: torch.as_tensor(x, dtype=dtype) for t, x in group_by_length(corpus, table).items()}
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD1FF])))
    noise_gen = torch.Generator().manual_seed(cfg.seed)

    if ckpt_dir is not None:
        os.makedirs(ckpt_dir, exist_ok=True)
    stats: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * 0.5 ** ((epoch - 1) // cfg.lr_halve_every)
        for group_param in optimizer.param_groups:
            group_param["lr"] = lr

        batches: list[tuple[int, np.ndarray]] = []
        for t, stack in groups.items():
            order = rng.permutation(stack.shape[0])
            for i in range(0, len(order), cfg.batch_size):
                batches.append((t, order[i : i + cfg.batch_size]))
        rng.shuffle(batches)

        sums = np.zeros(4)
        for t, idx in batches:
            x0 = groups[t][torch.as_tensor(idx, dtype=torch.long)]
            b = x0.shape[0]
            n = torch.randint(1, sched.n_steps + 1, (b,), generator=noise_gen)
            eps = torch.randn(x0.shape, generator=noise_gen, dtype=dtype)
            xn = forward_diffuse(x0, n, eps, sched)
            eps_hat = model(xn, n.numpy(), check_finite=True)
            x0_hat = estimate_x0(xn, eps_hat, n, sched)

            l1 = loss_l1(eps, eps_hat)
            l2 = loss_l2(x0, x0_hat)
            l3_hard, l3_soft = spatial(x0_hat)
            loss = l1 + l2 + l3_soft if cfg.use_l3 else l1 + l2
            if not torch.isfinite(loss):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch} (l1={float(l1.detach())}, "
                    f"l2={float(l2.detach())}, l3_soft={float(l3_soft.detach())})"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            if ema is not None:
                with torch.no_grad():
                    for k, v in model.state_dict().items():
                        ema[k].mul_(cfg.ema_decay).add_(v, alpha=1 - cfg.ema_decay)
            sums += np.array(
                [float(l1.detach()), float(l2.detach()), float(l3_soft.detach()), l3_hard]
            )

        means = sums / max(len(batches), 1)
        stats.append(EpochStats(epoch, means[0], means[1], means[2], means[3], lr))
        log.info(
            "epoch %d: l1=%.4f l2=%.4f l3_soft=%.4f l3_hard=%.4f lr=%.2e",
            epoch, means[0], means[1], means[2], means[3], lr,
        )
        if ckpt_dir is not None:
            save_checkpoint(
                model,
                os.path.join(ckpt_dir, f"epoch_{epoch:03d}.ckpt"),
                extra=_checkpoint_fields(cfg, table.dim),
                state_dict=ema,
            )
    if ema is not None:
        model.load_state_dict(ema)
    return model, stats


def _checkpoint_fields(cfg: TrainConfig, dim: int) -> dict[str, object]:
    return {"steps": cfg.steps, "beta1": cfg.beta1, "beta_n": cfg.beta_n, "dim": dim}


def sample_tensors(
    model: Denoiser,
    sched: NoiseSchedule,
    lengths: list[int],
    seed: int,
    noise: str = "ancestral",
    batch_size: int = 256,
) -> list[np.ndarray]:
    """Reverse-diffuse one (T, D+1) tensor per requested length.

    noise="ancestral" draws posterior noise (omitted at the final step);
    noise="printed-drift" instead adds the constant sqrt-variance drift.
    """
    if noise not in ("ancestral", "printed-drift"):
        raise ValidationError(f"unknown noise mode {noise!r}")
    gen = torch.Generator().manual_seed(seed)
    dtype = model.dtype
    channels = model.config.in_channels
    out: dict[int, list[np.ndarray]] = {}
    order: list[tuple[int, int]] = []  # (length, index within length group)
    counts: dict[int, int] = {}
    for t in lengths:
        if t < 2:
            raise ValidationError(f"trajectory length must be >= 2, got {t}")
        order.append((t, counts.get(t, 0)))
        counts[t] = counts.get(t, 0) + 1

    with torch.no_grad():
        for t in sorted(counts):
            remaining = counts[t]
            chunks: list[np.ndarray] = []
            while remaining > 0:
                b = min(remaining, batch_size)
                x = torch.randn((b, t, channels), generator=gen, dtype=dtype)
                for n in range(sched.n_steps, 0, -1):
                    eps_hat = model(x, np.full(b, n))
                    if noise == "printed-drift":
                        z = torch.ones_like(x)
                    elif n > 1:
                        z = torch.randn(x.shape, generator=gen, dtype=dtype)
                    else:
                        z = torch.zeros_like(x)
                    x = reverse_step(x, eps_hat, n, z, sched)
                chunks.extend(np.asarray(x[i].numpy(), dtype=np.float64) for i in range(b))
                remaining -= b
            out[t] = chunks
    return [out[t][i] for t, i in order]


def sample_corpus(
    model: Denoiser,
    table: SegmentEmbeddingTable,
    sched: NoiseSchedule,
    lengths: list[int],
    seed: int,
    net: RoadNetwork | None = None,
    network_name: str = "generated",
    noise: str = "ancestral",
) -> Corpus:
    """Generate one trajectory per entry of `lengths` and decode them."""
    tensors = sample_tensors(model, sched, lengths, seed, noise)
    corpus = Corpus(net.name if net is not None else network_name)
    for x0 in tensors:
        corpus.trajectories.append(decode(x0, table, net=None).traj)
    return corpus


def sample(
    model: Denoiser,
    table: SegmentEmbeddingTable,
    sched: NoiseSchedule,
    length: int,
    seed: int,
    net: RoadNetwork | None = None,
    noise: str = "ancestral",
) -> RNTraj:
    """Generate a single trajectory of the given length."""
    tensors = sample_tensors(model, sched, [length], seed, noise)
    return decode(tensors[0], table, net).traj
