"""Window extraction and two-scale patchification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch

from .errors import DataError, InvalidSpecError

ScaleTag = Literal["global", "local"]


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    local_window: int
    horizon: int

    def __post_init__(self):
        for name in ("lookback", "local_window", "horizon"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be positive")
        if self.local_window > self.lookback:
            raise InvalidSpecError("local window longer than the look-back window")


@dataclass(frozen=True)
class PatchSpec:
    """Patch length, stride and the scale the patches feed.

    ``align="end"`` anchors the last patch on the final time step, so the
    steps left over by the patch count are dropped from the oldest end of
    the window instead of the newest.
    """

    patch_len: int
    stride: int
    scale_tag: ScaleTag = "global"
    align: Literal["start", "end"] = "start"

    def __post_init__(self):
        if self.patch_len < 1 or self.stride < 1:
            raise InvalidSpecError("patch length and stride must be positive")
        if self.scale_tag not in ("global", "local"):
            raise InvalidSpecError(f"unknown scale tag {self.scale_tag!r}")
        if self.align not in ("start", "end"):
            raise InvalidSpecError(f"unknown alignment {self.align!r}")


@dataclass
class PatchTensor:
    """Patches of shape (..., D, PN, PL) plus the window span they were cut from."""

    values: torch.Tensor
    scale_tag: ScaleTag
    source_span: tuple[int, int]

    @property
    def num_patches(self) -> int:
        return self.values.shape[-2]

    @property
    def patch_len(self) -> int:
        return self.values.shape[-1]


def patch_count(window_len: int, spec: PatchSpec) -> int:
    """Number of patches, ``ceil((window_len - PL) / STR)``, never below one."""
    if window_len < spec.patch_len:
        raise InvalidSpecError(
            f"window of length {window_len} is shorter than patch length {spec.patch_len}"
        )
    count = -(-(window_len - spec.patch_len) // spec.stride)
    return max(count, 1)


def patchify(window: torch.Tensor, spec: PatchSpec) -> PatchTensor:
    """Cut a (..., D, window_len) tensor into (..., D, PN, PL) patches.

    Patch ``i`` covers ``[offset + i*STR, offset + i*STR + PL)`` where the
    offset is 0 for start alignment. With the ceiling patch count the last
    patch never runs past the window, so no padding is needed.
    """
    window_len = window.shape[-1]
    count = patch_count(window_len, spec)
    if window.numel() and not torch.isfinite(window).all():
        raise DataError("patchify received non-finite values")
    needed = (count - 1) * spec.stride + spec.patch_len
    offset = 0 if spec.align == "start" else window_len - needed
    segment = window[..., offset:offset + needed]
    values = segment.unfold(-1, spec.patch_len, spec.stride)
    return PatchTensor(values, spec.scale_tag, (offset, offset + needed))


def make_multiscale(window: torch.Tensor, cfg) -> tuple[PatchTensor, PatchTensor]:
    """Global patches from the full window, local patches from its last S steps."""
    if window.shape[-1] != cfg.lookback:
        raise InvalidSpecError(
            f"window length {window.shape[-1]} does not match lookback {cfg.lookback}"
        )
    global_patches = patchify(window, cfg.global_patch_spec())
    local_patches = patchify(window[..., -cfg.local_window:], cfg.local_patch_spec())
    return global_patches, local_patches
