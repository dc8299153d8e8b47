"""Selective state-space layers and the bidirectional global context encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidSpecError, NumericError
from .patching import PatchTensor

SCAN_CHUNK = 64


def _expm1_ratio(x: torch.Tensor) -> torch.Tensor:
    """``expm1(x) / x`` with its limit 1 at ``x == 0``."""
    zero = x == 0
    safe = torch.where(zero, torch.ones_like(x), x)
    return torch.where(zero, torch.ones_like(x), torch.expm1(safe) / safe)


def discretize(
    A: torch.Tensor, B: torch.Tensor, delta: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-order-hold discretization of a diagonal continuous system.

    Computes ``A_bar = exp(delta * A)`` and
    ``B_bar = (exp(delta * A) - 1) / A * B`` elementwise; at ``A = 0`` the
    second expression takes its limit ``delta * B``. Arguments broadcast.
    """
    dA = delta * A
    if (A == 0).any():
        factor = _expm1_ratio(dA) * delta
    else:
        factor = torch.expm1(dA) / A
    return torch.exp(dA), factor * B


def _first_bad_step(y: torch.Tensor) -> int:
    bad = ~torch.isfinite(y)
    per_step = bad.movedim(-2, 0).reshape(y.shape[-2], -1).any(dim=1)
    return int(per_step.nonzero()[0, 0])


def selective_scan(
    u: torch.Tensor,
    delta: torch.Tensor,
    A: torch.Tensor,
    B: torch.Tensor,
    C: torch.Tensor,
    D: torch.Tensor | None = None,
) -> torch.Tensor:
    """Run the input-dependent linear recurrence step by step.

    For every channel ``c`` and state ``n``::

        h[t] = exp(delta[t, c] * A[c, n]) * h[t-1] + B_bar[t, c, n] * u[t, c]
        y[t, c] = sum_n C[t, n] * h[t, c, n] + D[c] * u[t, c]

    with ``h[-1] = 0``.

    Args:
        u: inputs, shape (..., L, channels).
        delta: positive step sizes, shape (..., L, channels).
        A: negative diagonal state matrix, shape (channels, state).
        B: input matrices, shape (..., L, state).
        C: output matrices, shape (..., L, state).
        D: optional skip weights, shape (channels,).

    Returns:
        Tensor of shape (..., L, channels).

    Raises:
        NumericError: if any output is non-finite; ``step`` holds the first
            offending time index.
    """
    h = u.new_zeros(*u.shape[:-2], A.shape[0], A.shape[1])
    outputs = []
    # Discretize a chunk of steps at a time so the (..., K, channels, state)
    # operands stay cache-sized; the recurrence itself is one fused op per step.
    for start in range(0, u.shape[-2], SCAN_CHUNK):
        steps = slice(start, start + SCAN_CHUNK)
        decay, gain = discretize(
            A, B[..., steps, :].unsqueeze(-2), delta[..., steps, :].unsqueeze(-1)
        )
        drive = gain * u[..., steps, :].unsqueeze(-1)
        states = []
        for decay_t, drive_t in zip(decay.unbind(-3), drive.unbind(-3)):
            h = torch.addcmul(drive_t, decay_t, h)
            states.append(h)
        outputs.append((torch.stack(states, dim=-3) * C[..., steps, :].unsqueeze(-2)).sum(-1))
    y = torch.cat(outputs, dim=-2)
    if D is not None:
        y = y + D * u
    if not torch.isfinite(y).all():
        step = _first_bad_step(y)
        raise NumericError(f"selective scan produced non-finite values at step {step}", step)
    return y


class SelectiveSSM(nn.Module):
    """Parameters of a selective SSM with input-dependent B, C and step size.

    ``A`` is stored as ``A_log = log(-A)`` so the diagonal stays negative and
    every discretized decay lies in (0, 1).
    """

    def __init__(
        self,
        channels: int,
        state_dim: int = 16,
        dt_rank: int | None = None,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
    ):
        super().__init__()
        self.channels = channels
        self.state_dim = state_dim
        dt_rank = dt_rank or max(1, math.ceil(channels / 16))
        self.B_proj = nn.Linear(channels, state_dim, bias=False)
        self.C_proj = nn.Linear(channels, state_dim, bias=False)
        self.delta_proj = nn.Sequential(
            nn.Linear(channels, dt_rank, bias=False), nn.Linear(dt_rank, channels)
        )
        # decay rates 1..state_dim give log-spaced timescales per channel
        A = torch.arange(1, state_dim + 1, dtype=torch.float32).repeat(channels, 1)
        self.A_log = nn.Parameter(torch.log(A))
        self.D_skip = nn.Parameter(torch.ones(channels))
        dt = torch.exp(
            torch.rand(channels) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        )
        with torch.no_grad():
            # inverse softplus so the initial step sizes land in [dt_min, dt_max]
            self.delta_proj[1].bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.A_log)

    def step_sizes(self, x: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.delta_proj(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return selective_scan(
            x, self.step_sizes(x), self.A, self.B_proj(x), self.C_proj(x), self.D_skip
        )


class MambaBlock(nn.Module):
    """Residual Mamba mixer: norm, expand, causal conv, SiLU, scan, gate, project."""

    def __init__(
        self,
        d_model: int,
        state_dim: int = 16,
        expand: int = 2,
        conv_kernel: int = 4,
    ):
        super().__init__()
        inner = expand * d_model
        self.d_model = d_model
        self.inner = inner
        self.norm = nn.LayerNorm(d_model)
        self.in_proj = nn.Linear(d_model, 2 * inner)
        self.conv = nn.Conv1d(
            inner, inner, conv_kernel, groups=inner, padding=conv_kernel - 1
        )
        self.ssm = SelectiveSSM(inner, state_dim)
        self.out_proj = nn.Linear(inner, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Map (..., L, d_model) to the same shape."""
        lead, (length, width) = x.shape[:-2], x.shape[-2:]
        flat = x.reshape(-1, length, width)
        hidden, gate = self.in_proj(self.norm(flat)).chunk(2, dim=-1)
        hidden = self.conv(hidden.transpose(1, 2))[..., :length].transpose(1, 2)
        hidden = self.ssm(F.silu(hidden)) * F.silu(gate)
        out = flat + self.out_proj(hidden)
        return out.reshape(*lead, length, width)


def mamba_stack(d_model: int, n_layers: int, state_dim: int, expand: int, conv_kernel: int):
    return nn.Sequential(
        *(MambaBlock(d_model, state_dim, expand, conv_kernel) for _ in range(n_layers))
    )


@dataclass
class GlobalContext:
    """Context tensor of shape (..., D, PN_g, d_model)."""

    values: torch.Tensor


class GlobalContextEncoder(nn.Module):
    """Embed global patches and scan them in both directions.

    With ``cross_variate=True`` all variates' patches form one sequence of
    length ``D * PN_g`` (variate index varying slowest); otherwise every
    variate is scanned on its own.
    """

    def __init__(
        self,
        patch_len: int,
        d_model: int,
        n_layers: int = 2,
        state_dim: int = 16,
        expand: int = 2,
        conv_kernel: int = 4,
        cross_variate: bool = True,
    ):
        super().__init__()
        self.cross_variate = cross_variate
        self.d_model = d_model
        self.embed = nn.Linear(patch_len, d_model)
        self.forward_layers = mamba_stack(d_model, n_layers, state_dim, expand, conv_kernel)
        self.backward_layers = mamba_stack(d_model, n_layers, state_dim, expand, conv_kernel)

    def scan(self, tokens: torch.Tensor) -> torch.Tensor:
        """Bidirectional sum over a (..., N, d_model) token sequence."""
        ahead = self.forward_layers(tokens)
        behind = self.backward_layers(tokens.flip(-2)).flip(-2)
        return ahead + behind

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """Map (B, D, PN_g, PL_g) patches to a (B, D, PN_g, d_model) context."""
        batch, n_vars, n_patches, _ = patches.shape
        tokens = self.embed(patches)
        if self.cross_variate:
            tokens = tokens.reshape(batch, n_vars * n_patches, self.d_model)
        else:
            tokens = tokens.reshape(batch * n_vars, n_patches, self.d_model)
        return self.scan(tokens).reshape(batch, n_vars, n_patches, self.d_model)


def global_context(global_patches: PatchTensor, model: GlobalContextEncoder) -> GlobalContext:
    """Run the encoder on a global-scale PatchTensor (unbatched or batched)."""
    if global_patches.scale_tag != "global":
        raise InvalidSpecError("global_context expects global-scale patches")
    values = global_patches.values
    unbatched = values.dim() == 3
    if unbatched:
        values = values.unsqueeze(0)
    out = model(values)
    return GlobalContext(out[0] if unbatched else out)
