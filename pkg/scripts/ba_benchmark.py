"""Time rig-aware bundle adjustment on a synthetic drive-through.

    python3 scripts/ba_benchmark.py --times 100 --points 50000
"""

from __future__ import annotations

import argparse
import time

from rigsfm.pairgraph import frames_for
from rigsfm.sfm import SfmConfig, bundle_adjust, compute_metrics
from rigsfm.synth.bench import make_ba_problem


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--times", type=int, default=100)
    ap.add_argument("--points", type=int, default=50_000)
    ap.add_argument("--noise", type=float, default=1.0, help="pixel noise sigma")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t0 = time.perf_counter()
    rig, _, noisy = make_ba_problem(args.times, args.points, seed=args.seed, pixel_noise=args.noise)
    n_obs = sum(len(t) for t in noisy.tracks)
    print(f"built {len(rig.cameras) * args.times} frames, {len(noisy.points)} points, "
          f"{n_obs} observations in {time.perf_counter() - t0:.1f} s")
    t0 = time.perf_counter()
    rec, rep = bundle_adjust(noisy, rig, SfmConfig())
    wall = time.perf_counter() - t0
    m = compute_metrics(rec, rig, frames_for(rig.ids, args.times))
    print(f"bundle adjustment {wall:.1f} s, {rep.iterations} iterations, converged={rep.converged}, "
          f"pruned {rep.pruned}, E_reproj {m['E_reproj']:.3f} px")


if __name__ == "__main__":
    main()
