"""Time each hot kernel under both backends on shapes from the desk-scale models.

Usage: python benchmarks/bench_kernels.py [--repeat N]

The numba column excludes compilation (one warm-up call first).  The
backend used at run time is picked by SCJD_KERNELS=numba|numpy.
"""

import argparse
import timeit

import numpy as np
from scipy.spatial.transform import Rotation

from scjd import _kernels as K
from scjd.skeleton import build_h36m17


def cases():
    rng = np.random.default_rng(0)
    topo = build_h36m17()
    # student upsampler: 9 frames of width 272 -> 27 frames, batch 32
    x_up = rng.standard_normal((32, 272, 9))
    w_up = rng.standard_normal((272, 272, 3)) * 0.02
    g_up = rng.standard_normal((32, 272, 27))
    # regression head: weighted mean over 27 frames for 544 channels
    x_head = rng.standard_normal((32 * 544, 1, 27))
    w_head = np.full((1, 1, 27), 1 / 27)
    sims = rng.uniform(-1, 1, (32 * 9, 5))
    valid = rng.random((32 * 9, 5)) < 0.9
    pred, gt = rng.standard_normal((2, 4000, 17, 3)) * 100
    err = K.joint_errors_np(pred, gt)
    local = Rotation.from_rotvec(rng.standard_normal((240 * 17, 3)) * 0.3).as_matrix().reshape(240, 17, 3, 3)
    root = Rotation.from_rotvec(rng.standard_normal((240, 3)) * 0.3).as_matrix()
    parents = np.asarray(topo.parent, dtype=np.int64)
    offs = topo.rest_offsets()
    return {
        "deconv1d_forward": (x_up, w_up, 3),
        "deconv1d_backward": (x_up, w_up, g_up, 3),
        "conv1d_forward": (x_head, w_head, 1),
        "conv1d_backward": (x_head, w_head, rng.standard_normal((32 * 544, 1, 1)), 1),
        "topk_select": (sims, np.arange(-2, 3), valid, 3),
        "joint_errors": (pred, gt),
        "pck_curve": (err, np.linspace(5, 150, 30)),
        "forward_kinematics": (local, root, offs, parents),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = K.available_backends()
    print(f"{'kernel':<20}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, argv in cases().items():
        times = {}
        for b in backends:
            fn = K.get(name, b)
            fn(*argv)  # warm-up / compile
            n = 3
            times[b] = min(timeit.repeat(lambda: fn(*argv), number=n, repeat=args.repeat)) / n * 1e3
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[b]:>12.3f}" for b in backends) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
