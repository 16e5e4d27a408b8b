"""Trace the monitored objective and the noise-model scale over VEM iterations.

Shows why the moving-average Q is not monotone early on: the NMF noise
model starts well below the true noise power, and as power moves from the
speech estimate to the noise model the expected noise power V grows.

    python3 scripts/q_trace.py --seed 0 --iters 100 --csv q.csv
"""

import argparse
import csv

import numpy as np

from vaemm import experiment as ex, vem
from vaemm.nmf import noise_variance


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--mode", default="mix", choices=["mix", "a", "av"])
    ap.add_argument("--csv")
    args = ap.parse_args()

    cfg = ex.SceneConfig(n_vem_iters=args.iters)
    scene = ex.make_scene(args.seed, cfg)
    true_noise = float(noise_variance(scene.nmf).mean())
    rows = []

    def record(state, diag):
        V = vem.posterior_power(state.X, state.m, state.nu)
        rows.append({"iteration": diag["iteration"], "q": diag["q"], "pi": diag["pi"],
                     "mean_V": float(V.mean()), "mean_WH": float(noise_variance(state.nmf).mean())})

    v = None if args.mode == "a" else scene.v_corrupt
    vem.run(scene.X, v, scene.bundle, cfg.vem_config(args.mode, args.seed), callback=record)

    q = np.array([r["q"] for r in rows])
    steps = np.diff(ex.moving_average(q))
    print(f"true mean noise power {true_noise:.3f}")
    for r in rows[:12] + rows[12::10]:
        print(f"it {r['iteration']:4d}  Q {r['q']:12.3f}  pi {r['pi']:.3f}  "
              f"mean V {r['mean_V']:.3f}  mean WH {r['mean_WH']:.3f}")
    print(f"moving-average decreases at {int((steps < 0).sum())} of {len(steps)} steps; "
          f"first at step {int(np.argmax(steps < 0)) + 1 if (steps < 0).any() else None}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
