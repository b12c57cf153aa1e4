"""A pocket-size ASR-vs-distortion study, CSV and SVG included.

Compares four scenarios under untargeted BIM: the dynamic stochastic
ensemble attacked with fresh gradients every query (A), the fixed
smoothed ensemble baseline (F), the fixed plain ensemble (H), and the
single plain model (I). Each curve folds per-sample minimal distortions
into a cumulative success rate. Sample count and search depth are cut
down so the demo finishes in about a minute; the acceptance suite runs
the same protocol at 200 samples.
"""

import time

import numpy as np

from semlab import attacks, data, emit, ensemble, evaluation, nets, threat

SAMPLES = 12
GRID = tuple(np.round(np.linspace(0.0, 0.5, 11), 4))


def main():
    t0 = time.time()
    ds = data.gen_dataset(10, 160, jitter_sigma=0.3, seed=1, contrast=0.7)
    coll = ensemble.build_collection(ds, nets.default_zoo(10), (0.12, 0.25),
                                     (1, 2, 3), epochs=20, lr=0.05, seed=7)
    print(f"collection ready ({time.time() - t0:.0f}s)")
    images, labels = evaluation.eval_subset(ds, SAMPLES, seed=3)
    defense = threat.DefenseConfig(designated_arch="linear")
    cfg = attacks.attack_config("bim", 0.5)

    curves = []
    for sid in ("A", "F", "H", "I"):
        t1 = time.time()
        scenario = threat.build_scenario(sid, coll, seed=11, config=defense)
        curve = evaluation.build_curve(scenario, cfg, images, labels, GRID,
                                       n_trials=50, alpha=0.3, seed=5,
                                       coarse_steps=8, binary_steps=10,
                                       eps_max=0.5)
        curves.append(curve)
        print(f"  {sid}: asr {np.round(curve.asrs, 2)} "
              f"({time.time() - t1:.0f}s)")

    paths = emit.emit_results(curves, "runs/demo", "mini-figure3",
                              seed_note="demo seeds: 1/7/3/11/5")
    print("\nwrote:")
    for p in paths:
        print(f"  {p}")
    print("\nreading the overlay: the dynamic ensemble (A) should stay at "
          "or under the smoothed baseline (F) at small distortion, while "
          "the plain ensemble (H) is at least as easy to hit as the "
          "single model (I).")


if __name__ == "__main__":
    main()
