"""Noise-prediction network over (T, D+1) sequences.

A stack of residual dilated convolution layers with gated activations:
each layer adds a projected encoding of the diffusion step to its input,
applies a dilated convolution to twice the channel width, gates it with
sigmoid*tanh, and splits the result into a residual branch and a skip
branch. The summed skip branches feed a two-convolution output head.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .errors import NonFiniteError, ParseError, ShapeError

CHECKPOINT_MAGIC = "#ckpt v1"


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int  # D + 1
    channels: int = 512
    pe_dim: int = 512
    layers: int = 8
    layers_per_block: int = 4
    kernel: int = 3

    def __post_init__(self):
        if self.layers % self.layers_per_block != 0:
            raise ShapeError(
                f"layers ({self.layers}) must be divisible by block size ({self.layers_per_block})"
            )
        if self.pe_dim % 2 != 0:
            raise ShapeError(f"positional encoding dimension must be even, got {self.pe_dim}")
        if self.kernel % 2 != 1:
            raise ShapeError(f"kernel width must be odd for same-length padding, got {self.kernel}")

    def dilations(self) -> list[int]:
        return [2 ** (l % self.layers_per_block) for l in range(self.layers)]

    def receptive_half_width(self) -> int:
        return sum(d * (self.kernel // 2) for d in self.dilations())


def positional_encoding(n, dim: int) -> np.ndarray:
    """Sinusoidal step encoding: sin/cos of n scaled by 10^(4i / (dim/2))."""
    if dim % 2 != 0:
        raise ShapeError(f"positional encoding dimension must be even, got {dim}")
    half = dim // 2
    scales = 10.0 ** (4.0 * np.arange(half) / half)
    n_arr = np.asarray(n, dtype=np.float64)
    angles = n_arr[..., None] * scales
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


class Denoiser(nn.Module):
    def __init__(self, config: DenoiserConfig, dtype: torch.dtype = torch.float32, seed: int = 0):
        super().__init__()
        self.config = config
        c, f, k = config.channels, config.pe_dim, config.kernel
        self.input_proj = nn.Conv1d(config.in_channels, c, 1)
        self.step_fc1 = nn.Linear(f, f)
        self.step_fc2 = nn.Linear(f, f)
        self.step_projs = nn.ModuleList([nn.Linear(f, c) for _ in range(config.layers)])
        self.dilated_convs = nn.ModuleList(
            [
                nn.Conv1d(c, 2 * c, k, dilation=d, padding=(k // 2) * d)
                for d in config.dilations()
            ]
        )
        self.res_convs = nn.ModuleList([nn.Conv1d(c, c, 1) for _ in range(config.layers)])
        self.skip_convs = nn.ModuleList([nn.Conv1d(c, c, 1) for _ in range(config.layers)])
        self.out_conv1 = nn.Conv1d(c, c, 1)
        self.out_conv2 = nn.Conv1d(c, config.in_channels, 1)
        self._init_parameters(seed)
        self.to(dtype)

    def _init_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, (nn.Conv1d, nn.Linear)):
                    fan_in = module.weight.shape[1] * (
                        module.weight.shape[2] if module.weight.ndim == 3 else 1
                    )
                    bound = 1.0 / math.sqrt(fan_in)
                    module.weight.uniform_(-bound, bound, generator=gen)
                    module.bias.zero_()
            # a freshly initialized network predicts zero noise
            self.out_conv2.weight.zero_()
            self.out_conv2.bias.zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.input_proj.weight.dtype

    def step_embedding(self, n) -> torch.Tensor:
        pe = torch.as_tensor(positional_encoding(n, self.config.pe_dim), dtype=self.dtype)
        h = torch.nn.functional.silu(self.step_fc1(pe))
        return torch.nn.functional.silu(self.step_fc2(h))

    def forward(self, x: torch.Tensor, n, check_finite: bool = False) -> torch.Tensor:
        """Estimate the noise in x at diffusion step n; shape-preserving."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 3 or x.shape[2] != self.config.in_channels:
            raise ShapeError(
                f"expected (batch, T, {self.config.in_channels}) input, got {tuple(x.shape)}"
            )
        n_arr = np.broadcast_to(np.asarray(n), (x.shape[0],))
        emb = self.step_embedding(n_arr)  # (B, F)

        h = torch.relu(self.input_proj(x.transpose(1, 2)))  # (B, C, T)
        skip_sum = torch.zeros_like(h)
        c = self.config.channels
        for l in range(self.config.layers):
            z = h + self.step_projs[l](emb).unsqueeze(-1)
            gate = self.dilated_convs[l](z)
            p = torch.sigmoid(gate) * torch.tanh(gate)
            h = h + self.res_convs[l](p[:, :c])
            skip_sum = skip_sum + self.skip_convs[l](p[:, c:])
            if check_finite and not torch.isfinite(h).all():
                raise NonFiniteError("non-finite activations", layer=l + 1)
        out = self.out_conv2(torch.relu(self.out_conv1(skip_sum / math.sqrt(self.config.layers))))
        if check_finite and not torch.isfinite(out).all():
            raise NonFiniteError("non-finite activations in output head", layer=self.config.layers + 1)
        out = out.transpose(1, 2)
        return out.squeeze(0) if squeeze else out


def gradients(model: Denoiser, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Exact reverse-mode gradients of a scalar loss for every parameter."""
    if loss.ndim != 0:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        name: (g.detach().clone() if g is not None else torch.zeros_like(p))
        for name, p, g in zip(names, params, grads)
    }


def save_checkpoint(
    model: Denoiser,
    path: str | os.PathLike,
    extra: dict[str, object] | None = None,
    state_dict: dict[str, torch.Tensor] | None = None,
) -> None:
    """Text header with config fields, then name/shape lines and float32 payloads."""
    fields = dict(asdict(model.config))
    if extra:
        fields.update(extra)
    header = CHECKPOINT_MAGIC + "".join(f" {k}={v}" for k, v in fields.items()) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        for name, tensor in (state_dict or model.state_dict()).items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
            f.write((name + " " + " ".join(str(d) for d in arr.shape) + "\n").encode("utf-8"))
            f.write(arr.tobytes())


def read_checkpoint_fields(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "rb") as f:
        header = f.readline().decode("utf-8").rstrip("\n")
    if not header.startswith(CHECKPOINT_MAGIC):
        raise ParseError(f"{path}: missing '{CHECKPOINT_MAGIC}' header")
    return dict(part.split("=", 1) for part in header.split()[2:] if "=" in part)


def load_checkpoint(
    path: str | os.PathLike, dtype: torch.dtype = torch.float32
) -> tuple[Denoiser, dict[str, str]]:
    fields = read_checkpoint_fields(path)
    try:
        config = DenoiserConfig(
            in_channels=int(fields["in_channels"]),
            channels=int(fields["channels"]),
            pe_dim=int(fields["pe_dim"]),
            layers=int(fields["layers"]),
            layers_per_block=int(fields["layers_per_block"]),
            kernel=int(fields["kernel"]),
        )
    except (KeyError, ValueError):
        raise ParseError(f"{path}: incomplete checkpoint config header") from None

    tensors: dict[str, torch.Tensor] = {}
    with open(path, "rb") as f:
        f.readline()
        while True:
            line = f.readline()
            if not line:
                break
            text = line.decode("utf-8").rstrip("\n")
            if not re.match(r"^\S+( \d+)*$", text):
                raise ParseError(f"{path}: malformed tensor line {text!r}")
            parts = text.split()
            name, shape = parts[0], tuple(int(d) for d in parts[1:])
            count = int(np.prod(shape)) if shape else 1
            payload = f.read(count * 4)
            if len(payload) != count * 4:
                raise ParseError(f"{path}: truncated payload for tensor {name}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            tensors[name] = torch.as_tensor(arr.copy()).to(dtype)

    model = Denoiser(config, dtype=dtype)
    try:
        model.load_state_dict(tensors)
    except RuntimeError as exc:
        raise ParseError(f"{path}: checkpoint does not match its config: {exc}") from None
    return model, fields
