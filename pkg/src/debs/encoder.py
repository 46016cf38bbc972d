"""1D patch transformer mapping a fixed-length segment to a representation vector."""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from .config import EncoderConfig
from .errors import ContractViolation
from .numeric import ensure_finite


def patchify(signal: torch.Tensor, patch_size: int, input_len: int | None = None) -> torch.Tensor:
    """Split ``[..., L]`` into non-overlapping ``[..., L // patch_size, patch_size]`` tokens."""
    signal = torch.as_tensor(signal)
    length = signal.shape[-1]
    if input_len is not None and length != input_len:
        raise ContractViolation(f"expected {input_len} samples, got {length}")
    if length % patch_size:
        raise ContractViolation(f"signal length {length} not divisible by patch size {patch_size}")
    return signal.reshape(*signal.shape[:-1], length // patch_size, patch_size)


def sinusoidal_positions(n_tokens: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n_tokens, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(n_tokens, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table.float()


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) * (1.0 / math.sqrt(self.head_dim))
        y = att.softmax(dim=-1) @ v
        return self.out(y.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class PatchEncoder(nn.Module):
    """Patch embedding + sinusoidal positions + pre-norm blocks + final norm + mean pool."""

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.config = config
        c = config
        self.embed = nn.Linear(c.patch_size, c.model_dim)
        self.register_buffer("positions", sinusoidal_positions(c.n_tokens, c.model_dim), persistent=False)
        self.blocks = nn.ModuleList(Block(c.model_dim, c.heads, c.mlp_hidden) for _ in range(c.depth))
        self.norm = nn.LayerNorm(c.model_dim)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        # patch embedding gets fan-in scaling so content is not drowned by the positional table
        std = 1.0 / math.sqrt(self.config.patch_size)
        nn.init.trunc_normal_(self.embed.weight, std=std, a=-2 * std, b=2 * std)

    def forward(self, signal: torch.Tensor) -> torch.Tensor:
        """``[B, input_len]`` (or ``[input_len]``) -> ``[B, model_dim]`` (or ``[model_dim]``)."""
        single = signal.dim() == 1
        if single:
            signal = signal[None]
        tokens = patchify(signal, self.config.patch_size, self.config.input_len)
        x = self.embed(tokens) + self.positions
        for block in self.blocks:
            x = block(x)
        z = self.norm(x).mean(dim=1)
        ensure_finite(z, "encoder output")
        return z[0] if single else z


def block_param_count(dim: int, hidden: int) -> int:
    norms = 2 * 2 * dim
    attn = (dim * 3 * dim + 3 * dim) + (dim * dim + dim)
    mlp = (dim * hidden + hidden) + (hidden * dim + dim)
    return norms + attn + mlp


def param_count(config: EncoderConfig) -> int:
    """Closed-form count of trainable encoder scalars."""
    c = config
    embed = c.patch_size * c.model_dim + c.model_dim
    final_norm = 2 * c.model_dim
    return embed + c.depth * block_param_count(c.model_dim, c.mlp_hidden) + final_norm


def encode(signal: torch.Tensor, encoder: PatchEncoder, mode: str = "eval") -> torch.Tensor:
    """Functional wrapper: eval mode runs without building a graph."""
    if mode not in ("train", "eval"):
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    encoder.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            return encoder(signal)
    return encoder(signal)
