"""Time the compiled block kernel against the numpy reference.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Inputs are built from real scenes at the desk and paper array sizes, so the
shapes match what the estimator and the beam designer feed the kernel.
"""

import argparse
import timeit

import numpy as np

from jlbo import _kernels_py, kernels
from jlbo.channel import prior_variances, sample_gains
from jlbo.geometry import sample_scene
from jlbo.harness import PROFILES
from jlbo.signal import evaluate_blocks, random_beamforming


def kernel_args(profile, linear_in=None):
    """Collect the per-block kernel arguments by intercepting one evaluation."""
    cfg = PROFILES[profile]
    acfg = cfg.array_config()
    rng = np.random.default_rng(0)
    scene = sample_scene(cfg.n_bs, cfg.l1, cfg.l2, rng, region=cfg.region)
    gains = sample_gains(*prior_variances(scene), rng)
    bf = random_beamforming(acfg, rng)
    captured = []
    original = kernels.block_terms

    def capture(*args):
        captured.append(args)
        return original(*args)

    kernels.block_terms = capture
    try:
        evaluate_blocks(scene, gains.g, gains.h, bf.w, bf.theta, acfg, linear_in=linear_in)
    finally:
        kernels.block_terms = original
    return captured


def bench(fn, calls, repeat):
    def run():
        for args in calls:
            fn(*args)

    return min(timeit.repeat(run, number=1, repeat=repeat)) / len(calls)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernel not built; only the numpy reference is available")
    print(f"{'case':<22}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
    for profile in ("desk", "paper"):
        for linear_in in (None, "w", "theta"):
            calls = kernel_args(profile, linear_in)
            ref = bench(_kernels_py.block_terms, calls, args.repeat)
            label = f"{profile}/{linear_in or 'beams'}"
            if kernels.BACKEND == "cython":
                fast = bench(kernels.block_terms, calls, args.repeat)
                print(f"{label:<22}{1e3 * ref:>12.3f}{1e3 * fast:>13.3f}{ref / fast:>8.1f}x")
            else:
                print(f"{label:<22}{1e3 * ref:>12.3f}{'-':>13}{'-':>9}")


if __name__ == "__main__":
    main()
