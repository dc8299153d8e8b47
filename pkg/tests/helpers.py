"""Test oracles shared across modules."""

from __future__ import annotations

import numpy as np
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-8


def scan_oracle(u, delta, A, B, C, D=None):
    """Scalar-loop selective scan in numpy float64, for a single (L, C) sequence."""
    u, delta, A, B, C = (np.asarray(t, dtype=np.float64) for t in (u, delta, A, B, C))
    length, channels = u.shape
    state = A.shape[1]
    y = np.zeros((length, channels))
    for c in range(channels):
        for n in range(state):
            h = 0.0
            for t in range(length):
                a = A[c, n]
                step = delta[t, c]
                a_bar = np.exp(step * a)
                b_bar = (np.exp(step * a) - 1.0) / a * B[t, n] if a != 0 else step * B[t, n]
                h = a_bar * h + b_bar * u[t, c]
                y[t, c] += C[t, n] * h
    if D is not None:
        y += np.asarray(D, dtype=np.float64) * u
    return y


def parameter_gradcheck(module: torch.nn.Module, *inputs: torch.Tensor) -> bool:
    """Central finite differences against autograd for every parameter and input.

    The module must already be float64 and in eval mode.
    """
    names = [name for name, _ in module.named_parameters()]
    params = [p.detach().clone().requires_grad_(True) for _, p in module.named_parameters()]
    leaves = [x.detach().clone().requires_grad_(x.is_floating_point()) for x in inputs]

    def fn(*flat):
        values = dict(zip(names, flat[: len(names)]))
        return functional_call(module, values, tuple(flat[len(names):]))

    return gradcheck(fn, (*params, *leaves), eps=1e-6, atol=GRAD_ATOL, rtol=GRAD_RTOL)
