"""Randomized smoothing on one tiny model, from votes to abstention.

Trains a linear classifier on the 2-class synthetic set, then predicts
through Gaussian input noise with hard majority votes. For a linear model
the smoothed top-class probability has a closed form, Phi(margin /
(sigma * ||w||)), so the Monte-Carlo vote fraction can be checked against
it directly. Ends with the abstention rule: once no class holds at least
1 - alpha of the vote mass, the defense refuses to answer.
"""

import numpy as np
from scipy.stats import norm

from semlab import data, nets
from semlab.rng import stream
from semlab.smoothing import (SmoothedModel, EntryVotePredictor, hard_vote,
                              smoothed_vote_classes)

ALPHA = 0.3
TRIALS = 2000


def main():
    ds = data.gen_dataset(2, 40, jitter_sigma=0.3, seed=2, contrast=0.7)
    arch = nets.default_zoo(2)[0]
    model = nets.train(nets.build_model(arch, seed=0), ds, 0.0, epochs=10,
                       lr=0.05, rng=stream(4, "train"))
    print(f"trained {arch.arch_id}: clean accuracy "
          f"{nets.accuracy(model, *ds.test()):.3f}")

    x = ds.test()[0][0]
    W, _ = model.params
    logits = nets.predict_logits(model, x)
    top = int(np.argmax(logits))
    margin = float(logits[top] - logits[1 - top])
    w_norm = float(np.linalg.norm((W[top] - W[1 - top]).ravel()))
    print(f"\nsample 0: top class {top}, margin {margin:.3f}, "
          f"||w|| {w_norm:.3f}")

    print(f"\n{'sigma':>6} {'Phi':>8} {'vote':>8} {'abstain':>8}")
    for sigma in (0.1, 0.25, 0.75, 1.5, 3.0):
        phi = norm.cdf(margin / (sigma * w_norm))
        cls = smoothed_vote_classes(SmoothedModel(model, sigma), x, TRIALS,
                                    stream(7, "vote", int(sigma * 100)))
        frac = float(np.mean(cls == top))
        pred = EntryVotePredictor(SmoothedModel(model, sigma), 2)
        vote = hard_vote(pred, x, TRIALS, stream(8, "abst", int(sigma * 100)),
                         alpha=ALPHA)
        print(f"{sigma:6.2f} {phi:8.4f} {frac:8.4f} {str(vote.abstained):>8}")

    print(f"\nabstention fires when the non-top vote mass reaches "
          f"alpha={ALPHA}: a hopelessly noisy model answers 'no contest' "
          f"instead of guessing.")


if __name__ == "__main__":
    main()
