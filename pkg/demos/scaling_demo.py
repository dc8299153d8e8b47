"""Forward-pass time against look-back length for S2TX and two baselines.

With the global patch count held fixed, S2TX cost barely moves as the
look-back grows; a pointwise Mamba grows linearly and a pointwise
transformer quadratically.

Run: ``python demos/scaling_demo.py [out_dir]``
"""

import sys

from s2tx import ExperimentConfig, profiler


def main():
    kinds = ("s2tx", "sst_like", "plain_mamba", "vanilla_transformer")
    points = profiler.sweep(kinds, profiler.DEFAULT_LENGTHS, "fixed_patch_number", ExperimentConfig())
    print(profiler.format_table(points))
    print()
    for kind in kinds:
        print(f"{kind:>20}: time x{profiler.time_ratio(points, kind):.1f} from L=336 to L=2688")
    if len(sys.argv) > 1:
        paths = profiler.write_outputs(points, sys.argv[1])
        print("wrote", ", ".join(str(p) for p in paths.values()))


if __name__ == "__main__":
    main()
