"""Walk through multi-scale patching on a toy window.

Run: ``python demos/patching_demo.py``
"""

import torch

from s2tx import ExperimentConfig, PatchSpec, make_multiscale, patch_count, patchify


def main():
    # a ramp makes it easy to read which time steps each patch holds
    window = torch.arange(20, dtype=torch.float32).unsqueeze(0)
    for align in ("start", "end"):
        spec = PatchSpec(patch_len=6, stride=4, align=align)
        patches = patchify(window, spec)
        print(f"align={align}: {patches.num_patches} patches covering steps {patches.source_span}")
        for row in patches.values[0]:
            print("   ", row.int().tolist())

    cfg = ExperimentConfig()
    print(f"\ndefault config: L={cfg.lookback}, S={cfg.local_window}")
    print("  global patch count", patch_count(cfg.lookback, cfg.global_patch_spec()))
    print("  local patch count ", patch_count(cfg.local_window, cfg.local_patch_spec()))

    global_patches, local_patches = make_multiscale(torch.randn(7, cfg.lookback), cfg)
    print("  global patches", tuple(global_patches.values.shape), "from", global_patches.source_span)
    print("  local patches ", tuple(local_patches.values.shape), "from", local_patches.source_span,
          "of the last", cfg.local_window, "steps")


if __name__ == "__main__":
    main()
