"""Show what the selective scan does with its input-dependent step size.

A single channel with one state: a large step size forgets old input and
tracks the current value, a tiny one holds on to what it has seen.

Run: ``python demos/selective_scan_demo.py``
"""

import torch

from s2tx import MambaBlock, discretize, selective_scan


def main():
    A = torch.tensor([[-1.0]])
    for delta in (0.01, 0.5, 5.0):
        decay, gain = discretize(A, torch.ones(1), torch.tensor([[delta]]))
        print(f"delta={delta:<5} decay={decay.item():.4f} input gain={gain.item():.4f}")

    # a pulse at step 2, then silence; a step size switch at step 6
    length = 12
    u = torch.zeros(length, 1)
    u[2] = 1.0
    delta = torch.full((length, 1), 0.05)
    delta[2] = 3.0   # let the pulse in
    delta[6:] = 3.0  # then start forgetting quickly
    ones = torch.ones(length, 1)
    y = selective_scan(u, delta, A, ones, ones)
    print("\nstep  delta   output")
    for t in range(length):
        print(f"{t:>4}  {delta[t, 0].item():>5.2f}  {y[t, 0].item():.4f}")

    block = MambaBlock(16, state_dim=8).eval()
    x = torch.randn(2, 30, 16)
    print("\nMamba block maps", tuple(x.shape), "to", tuple(block(x).shape))


if __name__ == "__main__":
    main()
