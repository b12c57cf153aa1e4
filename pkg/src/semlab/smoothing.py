"""Gaussian-smoothed prediction, Monte-Carlo voting, abstention, ACA.

A smoothed model answers with the expected softmax under input noise
x + delta, delta ~ N(0, sigma^2 I), approximated by m draws. Decisions are
judged by an N-trial hard vote; the defense abstains when the non-top vote
mass reaches the threshold alpha, and abstention counts against accuracy.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernel, nets

DEFAULT_ALPHA = 0.3
DEFAULT_VOTE_TRIALS = 100


@dataclass(frozen=True)
class SmoothedModel:
    base: nets.Model
    sigma: float
    default_noise_samples: int = 32

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.default_noise_samples < 1:
            raise ValueError("default_noise_samples must be positive")


@dataclass(frozen=True)
class VoteResult:
    counts: np.ndarray
    n_trials: int
    top_class: int
    top_fraction: float
    abstained: bool

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.sum() != self.n_trials:
            raise ValueError("counts must sum to n_trials")
        if self.top_class != int(np.argmax(counts)):
            raise ValueError("top_class must be the (lowest-index) argmax")
        if abs(self.top_fraction - counts[self.top_class] / self.n_trials) > 1e-12:
            raise ValueError("top_fraction inconsistent with counts")


def vote_from_counts(counts, alpha: float = DEFAULT_ALPHA) -> VoteResult:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.min() < 0 or counts.sum() < 1:
        raise ValueError("counts must be nonnegative with at least one trial")
    n = int(counts.sum())
    top = int(np.argmax(counts))  # argmax takes the lowest index on ties
    frac = counts[top] / n
    return VoteResult(counts, n, top, float(frac),
                      abstain_from_fraction(float(frac), alpha))


def softmax(logits: np.ndarray) -> np.ndarray:
    probs, _ = kernel.forward_batch(kernel.softmax_xent(), [], logits)
    return probs


def smoothed_soft_predict(sm: SmoothedModel, x: np.ndarray, m: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Mean over m draws of softmax(f(x + delta)); sigma=0 is exact."""
    if m < 1:
        raise ValueError("m must be at least 1")
    x = kernel.as_tensor(x)
    if sm.sigma == 0.0:
        logits = nets.predict_logits(sm.base, x)
        return softmax(logits[None])[0]
    noise = kernel.gaussian_sample((m,) + x.shape, sm.sigma, rng)
    logits = nets.predict_logits_batch(sm.base, x[None] + noise)
    return softmax(logits).mean(axis=0)


def smoothed_vote_classes(sm: SmoothedModel, x: np.ndarray, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """n single-draw hard predictions argmax f(x + delta), batched."""
    x = kernel.as_tensor(x)
    if sm.sigma == 0.0:
        cls = int(np.argmax(nets.predict_logits(sm.base, x)))
        return np.full(n, cls, dtype=np.int64)
    noise = kernel.gaussian_sample((n,) + x.shape, sm.sigma, rng)
    logits = nets.predict_logits_batch(sm.base, x[None] + noise)
    return np.argmax(logits, axis=1).astype(np.int64)


class EntryVotePredictor:
    """Single-draw hard classifier of one smoothed model, with a batched
    vote path used by hard_vote."""

    def __init__(self, sm: SmoothedModel, class_count: int):
        self.sm = sm
        self.class_count = class_count

    def __call__(self, x, rng):
        return int(self.predict_classes(x, 1, rng)[0])

    def predict_classes(self, x, n, rng):
        return smoothed_vote_classes(self.sm, x, n, rng)


def _vote_calls(predictor):
    """Accept predictors taking (x) or (x, rng)."""
    try:
        sig = inspect.signature(predictor)
        positional = [
            p for p in sig.parameters.values()
            if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
            or p.kind is p.VAR_POSITIONAL
        ]
        takes_rng = len(positional) >= 2 or any(
            p.kind is p.VAR_POSITIONAL for p in positional
        )
    except (TypeError, ValueError):
        takes_rng = True
    if takes_rng:
        return predictor
    return lambda x, rng: predictor(x)


def hard_vote(predictor, x, n_trials: int, rng: np.random.Generator,
              alpha: float = DEFAULT_ALPHA,
              class_count: int | None = None) -> VoteResult:
    """Tally n_trials independent hard predictions one-hot.

    `predictor` is called as predictor(x, rng) (or predictor(x) if it takes
    a single argument); a `predict_classes(x, n, rng)` method, when present,
    is used to batch the trials.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if hasattr(predictor, "predict_classes"):
        classes = np.asarray(predictor.predict_classes(x, n_trials, rng))
    else:
        call = _vote_calls(predictor)
        classes = np.array([int(call(x, rng)) for _ in range(n_trials)])
    if classes.min() < 0:
        raise ValueError("predictor returned a negative class")
    width = int(classes.max()) + 1
    if class_count is not None:
        if width > class_count:
            raise ValueError("predictor returned a class beyond class_count")
        width = class_count
    elif hasattr(predictor, "class_count"):
        width = max(width, int(predictor.class_count))
    counts = np.bincount(classes, minlength=width)
    return vote_from_counts(counts, alpha)


def binomial_two_sided(successes: int, trials: int, p0: float) -> float:
    """Exact two-sided binomial test p-value."""
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0,1)")
    return float(stats.binomtest(successes, trials, p0).pvalue)


def abstain_from_fraction(top_fraction: float, alpha: float) -> bool:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0,1)")
    return (1.0 - top_fraction) >= alpha - 1e-12


def abstain_decision(vote: VoteResult, alpha: float) -> bool:
    """Abstain iff the non-top vote mass reaches alpha."""
    return abstain_from_fraction(vote.top_fraction, alpha)


def approximated_certified_accuracy(predictor, images, labels, n_trials: int,
                                    alpha: float,
                                    rng: np.random.Generator) -> float:
    """Fraction of samples voted for the true class without abstaining."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    hits = 0
    for i, (x, y) in enumerate(zip(images, labels)):
        vote = hard_vote(predictor, x, n_trials, rng, alpha)
        if vote.top_class == int(y) and not vote.abstained:
            hits += 1
    return hits / len(images)
