"""Multi-head self/cross attention, the local decoder-style layer and the forecast head."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import InvalidSpecError


class MultiHeadAttention(nn.Module):
    """Unmasked multi-head attention with bias-free projections.

    Set ``keep_weights`` to retain the last attention matrix in
    ``last_weights`` (shape (..., heads, L_T, L_S)).
    """

    def __init__(self, d_model: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % num_heads:
            raise InvalidSpecError(f"d_model={d_model} not divisible by num_heads={num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.W_q = nn.Linear(d_model, d_model, bias=False)
        self.W_k = nn.Linear(d_model, d_model, bias=False)
        self.W_v = nn.Linear(d_model, d_model, bias=False)
        self.W_o = nn.Linear(d_model, d_model, bias=False)
        self.dropout = nn.Dropout(dropout)
        self.keep_weights = False
        self.last_weights: torch.Tensor | None = None

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        return x.unflatten(-1, (self.num_heads, self.d_head)).transpose(-3, -2)

    def forward(self, target: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        q = self._split(self.W_q(target))
        k = self._split(self.W_k(source))
        v = self._split(self.W_v(source))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        weights = scores.softmax(dim=-1)
        if self.keep_weights:
            self.last_weights = weights.detach()
        mixed = self.dropout(weights) @ v
        return self.W_o(mixed.transpose(-3, -2).flatten(-2))


def cross_attention(
    source: torch.Tensor, target: torch.Tensor, params: MultiHeadAttention
) -> torch.Tensor:
    """Queries from ``target`` (L_T, d), keys and values from ``source`` (L_S, d)."""
    if source.shape[-1] != params.d_model or target.shape[-1] != params.d_model:
        raise InvalidSpecError("source/target width does not match d_model")
    return params(target, source)


def self_attention(target: torch.Tensor, params: MultiHeadAttention) -> torch.Tensor:
    return cross_attention(target, target, params)


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, width: int, dropout: float = 0.0):
        super().__init__(
            nn.Linear(d_model, width),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(width, d_model),
        )


class LocalLayer(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention to a context, FFN.

    With ``cross=False`` the cross-attention sublayer is absent and the
    block is a plain transformer encoder layer.
    """

    def __init__(
        self,
        d_model: int,
        num_heads: int,
        ffn_width: int,
        dropout: float = 0.0,
        cross: bool = True,
    ):
        super().__init__()
        self.cross = cross
        self.norm_self = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, num_heads, dropout)
        if cross:
            self.norm_cross = nn.LayerNorm(d_model)
            self.cross_attn = MultiHeadAttention(d_model, num_heads, dropout)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_width, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.dropout(self_attention(h, self.self_attn))
        if self.cross:
            if context is None:
                raise InvalidSpecError("cross-attention layer needs a context")
            x = x + self.dropout(cross_attention(context, self.norm_cross(x), self.cross_attn))
        return x + self.dropout(self.ffn(self.norm_ffn(x)))


class LocalModel(nn.Module):
    """Patch embedding, learned positions and a stack of local layers."""

    def __init__(
        self,
        patch_len: int,
        num_patches: int,
        d_model: int,
        n_layers: int = 2,
        num_heads: int = 4,
        ffn_width: int = 128,
        dropout: float = 0.0,
        cross: bool = True,
    ):
        super().__init__()
        self.embed = nn.Linear(patch_len, d_model)
        self.position = nn.Parameter(torch.randn(num_patches, d_model) * 0.02)
        self.dropout = nn.Dropout(dropout)
        self.layers = nn.ModuleList(
            LocalLayer(d_model, num_heads, ffn_width, dropout, cross) for _ in range(n_layers)
        )
        self.norm = nn.LayerNorm(d_model)

    def forward(self, patches: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        """(N, PN_l, PL_l) patches and (N, PN_g, d) context -> (N, PN_l, d)."""
        x = self.dropout(self.embed(patches) + self.position)
        for layer in self.layers:
            x = layer(x, context)
        return self.norm(x)


def local_layer(
    local_tokens: torch.Tensor, context: torch.Tensor, layer: LocalLayer
) -> torch.Tensor:
    return layer(local_tokens, context)


class ForecastHead(nn.Linear):
    """One linear map shared by all variates, from flattened features to H steps."""

    def __init__(self, in_features: int, horizon: int):
        super().__init__(in_features, horizon)
        self.horizon = horizon


def forecast_head(local_outputs: torch.Tensor, head: ForecastHead) -> torch.Tensor:
    """Flatten the last two dims of (..., D, PN_l, d) and project to (..., D, H)."""
    return head(local_outputs.flatten(-2))
