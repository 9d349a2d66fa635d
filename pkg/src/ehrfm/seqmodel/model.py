"""A small pre-norm decoder-only transformer with rotary positions."""

from __future__ import annotations

import dataclasses
import math

import torch
import torch.nn.functional as F
from torch import nn


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_context: int = 1024
    dropout: float = 0.0
    seed: int = 0
    positions: str = "rotary"
    tie_weights: bool = True

    def __post_init__(self):
        if self.vocab_size < 1 or self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("vocab_size, d_model, n_layers and n_heads must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("rotary positions need an even head dimension")
        if self.positions != "rotary":
            raise ValueError(f"unsupported position scheme {self.positions!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def rotary_tables(positions: torch.Tensor, head_dim: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """cos/sin tables of shape (rows, 1, len, head_dim/2) for integer positions."""
    inv_freq = 1.0 / (10000.0 ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
    angles = positions.to(torch.float64)[..., None] * inv_freq
    return angles.cos().to(dtype)[:, None], angles.sin().to(dtype)[:, None]


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.d_model // cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.dropout = cfg.dropout

    def forward(self, x, rope, allowed, need_weights: bool = False):
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k = apply_rotary(q, *rope), apply_rotary(k, *rope)
        drop = self.dropout if self.training else 0.0
        if need_weights:
            if allowed is None:
                allowed = torch.ones(n, n, dtype=torch.bool, device=x.device).tril()
            scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
            scores = scores.masked_fill(~allowed, float("-inf"))
            weights = scores.softmax(dim=-1)
            out = F.dropout(weights, drop, self.training) @ v
        else:
            weights = None
            # allowed=None means plain causal attention, which has a faster kernel
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=allowed, dropout_p=drop,
                                                 is_causal=allowed is None)
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.proj(out), weights


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x, rope, allowed, need_weights=False):
        a, w = self.attn(self.norm1(x), rope, allowed, need_weights)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, w


class DecoderLM(nn.Module):
    """Token embeddings, pre-norm blocks, final LayerNorm and a (tied) output projection.

    ``hidden`` returned by :meth:`forward` is the post-final-norm activation.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.n_layers)])
        self.final_norm = nn.LayerNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        if cfg.tie_weights:
            self.lm_head.weight = self.embed.weight
        self.reset_parameters()

    def reset_parameters(self):
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.normal_(p, std=0.02)
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None,
                need_weights: bool = False):
        """Logits and final hidden states for a (rows, len) token matrix.

        ``mask`` marks real tokens with 1. Masked keys are not attended to
        (every position still attends to itself) and positions count from the
        first real token of each row. Without a mask all positions attend
        causally, PAD included.
        """
        if tokens.dim() != 2:
            raise ValueError("tokens must be a (rows, len) matrix")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ValueError("token id out of range")
        b, n = tokens.shape
        dev = tokens.device
        if mask is None:
            positions = torch.arange(n, device=dev).expand(b, n)
            allowed = None
        else:
            mask = mask.to(torch.bool)
            positions = (mask.long().cumsum(dim=1) - 1).clamp(min=0)
            causal = torch.ones(n, n, dtype=torch.bool, device=dev).tril()
            eye = torch.eye(n, dtype=torch.bool, device=dev)
            allowed = (causal & mask[:, None, :]) | eye
            allowed = allowed[:, None]
        x = self.embed(tokens)
        rope = rotary_tables(positions, self.config.d_model // self.config.n_heads, x.dtype)
        weights = []
        for block in self.blocks:
            x, w = block(x, rope, allowed, need_weights)
            weights.append(w)
        hidden = self.final_norm(x)
        logits = self.lm_head(hidden)
        if need_weights:
            return logits, hidden, weights
        return logits, hidden


def init_model(config: ModelConfig) -> DecoderLM:
    """Build a model whose initial weights depend only on ``config.seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return DecoderLM(config)


def forward(model: DecoderLM, tokens, mask=None):
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    if mask is not None:
        mask = torch.as_tensor(mask)
    return model(tokens, mask)


def nll_loss(logits: torch.Tensor, targets, loss_mask) -> torch.Tensor:
    """Mean next-token cross-entropy over positions where ``loss_mask`` is set."""
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device)
    loss_mask = torch.as_tensor(loss_mask, device=logits.device).to(torch.bool)
    if logits.shape[:-1] != targets.shape or targets.shape != loss_mask.shape:
        raise ValueError("logits, targets and loss_mask shapes disagree")
    count = loss_mask.sum()
    if count == 0:
        raise ValueError("loss mask excludes every position")
    per_token = F.cross_entropy(logits.flatten(0, -2), targets.flatten(), reduction="none")
    return (per_token * loss_mask.flatten().to(per_token.dtype)).sum() / count
