"""The attack toolbox against a single undefended model.

Runs the four white-box attacks at a fixed budget against the plain
designated model (the weakest scenario for the defender), then searches
for each method's minimal successful distortion. The black-box half
estimates gradients from score queries only: NES with antithetic Gaussian
probes, SPSA with Rademacher probes, both compared against the true
analytic gradient by cosine similarity.
"""

import numpy as np

from semlab import attacks, data, ensemble, nets, threat
from semlab.evaluation import attack_and_judge, min_distortion_search
from semlab.rng import stream
from semlab.smoothing import softmax

EPS = 0.25


def main():
    ds = data.gen_dataset(10, 40, jitter_sigma=0.3, seed=1, contrast=0.7)
    coll = ensemble.build_collection(ds, nets.default_zoo(10), (0.12, 0.25),
                                     (1, 2, 3), epochs=8, lr=0.05, seed=7)
    defense = threat.DefenseConfig(designated_arch="linear")
    scenario = threat.build_scenario("I", coll, seed=11, config=defense)
    x, y = ds.test()[0][0], int(ds.test()[1][0])

    print(f"white-box attacks on the designated plain model, "
          f"eps={EPS} (linf), true label {y}:")
    for method in ("fgsm", "bim", "mim", "pgd"):
        cfg = attacks.attack_config(method, EPS)
        verdict = attack_and_judge(scenario, cfg, x, y, n_trials=50,
                                   alpha=0.3,
                                   attack_rng=stream(5, method, "attack"),
                                   judge_rng=stream(5, method, "judge"))
        print(f"  {method:>4}: success={verdict.success} "
              f"({verdict.reason}, top={verdict.vote.top_class})")

    print("\nminimal successful distortion per method "
          "(coarse+binary search):")
    for method in ("fgsm", "bim", "mim", "pgd"):
        cfg = attacks.attack_config(method, 0.5)
        eps = min_distortion_search(scenario, cfg, x, y, sample_tag=0,
                                    seed=5, n_trials=50, alpha=0.3,
                                    coarse_steps=10, binary_steps=12,
                                    eps_max=0.5)
        print(f"  {method:>4}: eps* = {eps:.4f}" if eps is not None
              else f"  {method:>4}: not found below 0.5")

    model = coll.plain_models["linear"]
    true_grad = nets.input_grad(model, x, y, "untargeted-loss")

    def scores(q):
        return softmax(nets.predict_logits(model, q)[None])[0]

    print("\nscore-only gradient estimates vs the analytic gradient:")
    for name, fn in (("nes", attacks.nes_gradient),
                     ("spsa", attacks.spsa_gradient)):
        est = fn(scores, x, y, "untargeted-loss", 200, 0.001,
                 stream(3, name))
        cos = float(np.sum(est * true_grad)
                    / (np.linalg.norm(est) * np.linalg.norm(true_grad)))
        print(f"  {name:>4}: cosine {cos:.3f} from 400 queries")


if __name__ == "__main__":
    main()
