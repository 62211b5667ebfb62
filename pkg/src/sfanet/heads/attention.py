"""Multi-head self-attention over fused patch features."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn

from ..errors import ConfigurationError


class PatchAttention(nn.Module):
    """Standard multi-head self-attention: [B, P, D] -> [B, P, D].

    ``scale`` multiplies the query-key dot products before the softmax;
    ``None`` selects the usual 1/sqrt(head_dim).
    """

    def __init__(self, dim: int, num_heads: int = 1, scale: Optional[float] = None) -> None:
        super().__init__()
        if num_heads < 1 or dim % num_heads:
            raise ConfigurationError(
                f"attention head count {num_heads} must divide feature dim {dim}"
            )
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = 1.0 / math.sqrt(self.head_dim) if scale is None else scale
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    @classmethod
    def identity(cls, dim: int, num_heads: int = 1, scale: Optional[float] = None) -> "PatchAttention":
        """All four projections set to the identity (for hand-checkable tests)."""
        attn = cls(dim, num_heads, scale)
        with torch.no_grad():
            for proj in (attn.query, attn.key, attn.value, attn.out):
                proj.weight.copy_(torch.eye(dim))
                proj.bias.zero_()
        return attn

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ConfigurationError(
                f"expected [B, P, {self.dim}] input, got shape {tuple(x.shape)}"
            )
        b, p, _ = x.shape

        def split_heads(t: torch.Tensor) -> torch.Tensor:
            return t.reshape(b, p, self.num_heads, self.head_dim).transpose(1, 2)

        q = split_heads(self.query(x))
        k = split_heads(self.key(x))
        v = split_heads(self.value(x))
        scores = (q @ k.transpose(-2, -1)) * self.scale
        weights = torch.softmax(scores, dim=-1)
        attended = weights @ v
        attended = attended.transpose(1, 2).reshape(b, p, self.dim)
        return self.out(attended)
