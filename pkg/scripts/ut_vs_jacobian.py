"""Compare unscented and linearised splat covariances against Monte Carlo.

Sweeps the angular size of an isotropic Gaussian and its position in the
image (centre to periphery) and prints the relative Frobenius error of each
method.

    python3 scripts/ut_vs_jacobian.py --samples 200000
"""

from __future__ import annotations

import argparse

import numpy as np

from rigsfm.geometry import RigidPose, unproject
from rigsfm.splatproj import Gaussian3D, jacobian_project, mc_project_oracle, ut_project
from rigsfm.synth.rig import make_default_rig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--depth", type=float, default=3.0)
    args = ap.parse_args()

    intr = make_default_rig().cameras[0].intrinsics
    ident = RigidPose.identity()
    print(f"{'pixel':>12} {'size_deg':>8} {'ut_err':>8} {'jac_err':>8}")
    for u in ([160.0, 120.0], [240.0, 120.0], [290.0, 120.0], [305.0, 125.0]):
        b = unproject(np.array(u), intr)
        for size in (1.0, 5.0, 10.0, 20.0):
            sd = args.depth * np.tan(np.radians(size / 2))
            g = Gaussian3D(b * args.depth, sd ** 2 * np.eye(3))
            try:
                mc = mc_project_oracle(g, ident, intr, args.samples, seed=0)
                ut = ut_project(g, ident, intr).cov
            except Exception as e:  # noqa: BLE001 - report and continue the sweep
                print(f"{str(u):>12} {size:8.1f} {type(e).__name__}")
                continue
            jac = jacobian_project(g, ident, intr).cov
            ref = np.linalg.norm(mc.cov)
            print(f"{str(u):>12} {size:8.1f} {np.linalg.norm(ut - mc.cov) / ref:8.4f} "
                  f"{np.linalg.norm(jac - mc.cov) / ref:8.4f}")


if __name__ == "__main__":
    main()
