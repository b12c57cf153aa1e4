"""Gradient attacks (FGSM/BIM/MIM/PGD) and score-based estimators (NES/SPSA).

All attacks are parameterized over a gradient or score oracle, so the same
update loop serves fixed models, fixed ensembles, and defenses whose
gradients change between iterations. Iterates are always projected back
into the epsilon-ball around the clean input and clipped to the [0,1] box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernel

WHITE_METHODS = ("fgsm", "bim", "mim", "pgd")
BLACK_METHODS = ("nes", "spsa")
METHODS = WHITE_METHODS + BLACK_METHODS
NORMS = ("linf", "l2")

DEFAULT_QUERY_BUDGET = 5000


class AttackError(RuntimeError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class AttackConfig:
    method: str
    epsilon: float
    norm: str = "linf"
    targeted: bool = False
    target_class: Optional[int] = None
    iterations: int = 20
    step_size: float = 1.0
    momentum_mu: float = 0.0
    query_budget: int = DEFAULT_QUERY_BUDGET
    est_samples: int = 50
    est_radius: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.targeted != (self.target_class is not None):
            raise ValueError("targeted requires target_class and vice versa")
        if self.method == "fgsm" and self.iterations != 1:
            raise ValueError("fgsm is single-step: iterations must be 1")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.momentum_mu < 0:
            raise ValueError("momentum_mu must be nonnegative")
        if self.method in BLACK_METHODS and self.query_budget < 1:
            raise ValueError("black-box attacks need a positive query_budget")
        if self.est_samples < 1 or self.est_radius <= 0:
            raise ValueError("est_samples/est_radius must be positive")


def attack_config(method: str, epsilon: float, norm: str = "linf",
                  targeted: bool = False, target_class: Optional[int] = None,
                  iterations: Optional[int] = None,
                  step_size: Optional[float] = None,
                  momentum_mu: Optional[float] = None,
                  query_budget: int = DEFAULT_QUERY_BUDGET,
                  est_samples: int = 50,
                  est_radius: float = 0.1) -> AttackConfig:
    """AttackConfig with the usual defaults filled per method:
    fgsm takes one full-epsilon step; iterative methods take 20 steps of
    2.5*epsilon/iterations; mim defaults to momentum 1.0."""
    if iterations is None:
        iterations = 1 if method == "fgsm" else 20
    if step_size is None:
        if method == "fgsm":
            step_size = epsilon if epsilon > 0 else 1.0
        else:
            step_size = 2.5 * epsilon / iterations if epsilon > 0 else 1.0
    if momentum_mu is None:
        momentum_mu = 1.0 if method == "mim" else 0.0
    return AttackConfig(
        method=method, epsilon=float(epsilon), norm=norm, targeted=targeted,
        target_class=target_class, iterations=int(iterations),
        step_size=float(step_size), momentum_mu=float(momentum_mu),
        query_budget=int(query_budget), est_samples=int(est_samples),
        est_radius=float(est_radius),
    )


@dataclass(frozen=True)
class GradientOracle:
    """The attacker's view of the defense: analytic gradients (white) or a
    probability-vector query channel (score)."""

    kind: str
    grad: Optional[Callable] = None    # (x, label, mode) -> gradient tensor
    scores: Optional[Callable] = None  # (x) -> probability vector

    def __post_init__(self):
        if self.kind not in ("white", "score"):
            raise ValueError(f"oracle kind must be white or score, not {self.kind!r}")
        if self.kind == "white" and self.grad is None:
            raise ValueError("white oracle needs a grad function")
        if self.kind == "score" and self.scores is None:
            raise ValueError("score oracle needs a scores function")


def project(x: np.ndarray, x0: np.ndarray, epsilon: float,
            norm: str) -> np.ndarray:
    """Nearest point in the epsilon-ball around x0, then [0,1] box clip."""
    x = kernel.as_tensor(x)
    x0 = kernel.as_tensor(x0)
    if x.shape != x0.shape:
        raise kernel.ShapeError(f"shape mismatch {x.shape} vs {x0.shape}")
    if norm == "linf":
        x = np.clip(x, x0 - epsilon, x0 + epsilon)
    elif norm == "l2":
        delta = x - x0
        dist = float(np.linalg.norm(delta.ravel()))
        if dist > epsilon:
            x = x0 + delta * (epsilon / dist)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return np.clip(x, 0.0, 1.0)


def _step_direction(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    flat = float(np.linalg.norm(g.ravel()))
    if flat == 0.0:
        return np.zeros_like(g)
    return g / flat


def _random_start(x0: np.ndarray, epsilon: float, norm: str,
                  rng: np.random.Generator) -> np.ndarray:
    if norm == "linf":
        return x0 + rng.uniform(-epsilon, epsilon, size=x0.shape)
    direction = rng.normal(size=x0.shape)
    nrm = float(np.linalg.norm(direction.ravel()))
    if nrm == 0.0:
        return x0.copy()
    radius = epsilon * rng.uniform() ** (1.0 / x0.size)
    return x0 + direction * (radius / nrm)


def iterative_gradient_attack(cfg: AttackConfig, oracle: GradientOracle,
                              x0: np.ndarray, y: int,
                              rng: Optional[np.random.Generator] = None
                              ) -> np.ndarray:
    """FGSM/BIM/MIM/PGD loop over a white-box gradient oracle.

    The oracle is queried afresh every iteration, so oracles with per-call
    randomness contribute a new gradient each step. Targeted attacks step
    against the gradient of the target-class loss.
    """
    if cfg.method not in WHITE_METHODS:
        raise ValueError(f"{cfg.method} is not a white-box method")
    if oracle.kind != "white":
        raise ValueError("iterative_gradient_attack needs a white oracle")
    x0 = kernel.as_tensor(x0)
    if cfg.epsilon == 0.0:
        return x0.copy()
    if cfg.method == "pgd":
        if rng is None:
            raise ValueError("pgd needs an rng for its random start")
        x = project(_random_start(x0, cfg.epsilon, cfg.norm, rng),
                    x0, cfg.epsilon, cfg.norm)
    else:
        x = x0.copy()
    label = cfg.target_class if cfg.targeted else int(y)
    mode = "targeted-loss" if cfg.targeted else "untargeted-loss"
    sign = -1.0 if cfg.targeted else 1.0
    momentum = np.zeros_like(x0) if cfg.method == "mim" else None
    for it in range(cfg.iterations):
        g = np.asarray(oracle.grad(x, label, mode), dtype=np.float64)
        if g.shape != x0.shape:
            raise AttackError(
                f"oracle gradient shape {g.shape} != input {x0.shape}", it
            )
        if not np.all(np.isfinite(g)):
            raise AttackError("non-finite gradient from oracle", it)
        if momentum is not None:
            l1 = float(np.abs(g).sum())
            momentum = cfg.momentum_mu * momentum + (g / l1 if l1 > 0 else g)
            g = momentum
        x = project(x + sign * cfg.step_size * _step_direction(g, cfg.norm),
                    x0, cfg.epsilon, cfg.norm)
    return x


# ---------------------------------------------------------------------------
# score-based gradient estimation

def _score_loss(scores_fn, x: np.ndarray, label: int) -> float:
    p = np.asarray(scores_fn(x), dtype=np.float64)
    return float(-np.log(max(float(p[label]), 1e-300)))


def nes_gradient(scores_fn, x: np.ndarray, label: int, mode: str, q: int,
                 radius: float, rng: np.random.Generator) -> np.ndarray:
    """Antithetic Gaussian-direction estimate of the score-loss gradient;
    consumes exactly 2q score queries."""
    if q < 1 or radius <= 0:
        raise ValueError("q and radius must be positive")
    x = kernel.as_tensor(x)
    est = np.zeros_like(x)
    for _ in range(q):
        u = rng.normal(size=x.shape)
        lp = _score_loss(scores_fn, x + radius * u, label)
        lm = _score_loss(scores_fn, x - radius * u, label)
        est += (lp - lm) * u
    return est / (2.0 * q * radius)


def spsa_gradient(scores_fn, x: np.ndarray, label: int, mode: str, q: int,
                  radius: float, rng: np.random.Generator) -> np.ndarray:
    """Simultaneous-perturbation estimate with Rademacher directions;
    consumes exactly 2q score queries."""
    if q < 1 or radius <= 0:
        raise ValueError("q and radius must be positive")
    x = kernel.as_tensor(x)
    est = np.zeros_like(x)
    for _ in range(q):
        delta = rng.integers(0, 2, size=x.shape) * 2.0 - 1.0
        lp = _score_loss(scores_fn, x + radius * delta, label)
        lm = _score_loss(scores_fn, x - radius * delta, label)
        # delta is +-1 so its elementwise inverse is itself
        est += (lp - lm) / (2.0 * radius) * delta
    return est / q


class _QueryCounter:
    """Wraps a score function and refuses calls beyond the budget."""

    def __init__(self, fn, budget: int):
        self.fn = fn
        self.budget = budget
        self.used = 0

    def remaining(self) -> int:
        return self.budget - self.used

    def __call__(self, x):
        if self.used >= self.budget:
            raise AttackError("query budget exhausted")
        self.used += 1
        return self.fn(x)


def black_box_attack(cfg: AttackConfig, oracle: GradientOracle,
                     x0: np.ndarray, y: int,
                     rng: np.random.Generator) -> np.ndarray:
    """NES/SPSA attack under an exact query budget.

    Each iteration spends 2*est_samples queries on the gradient estimate
    plus one on scoring the new iterate; the loop stops when the budget
    cannot fund another estimate, and the best-scoring iterate (highest
    loss untargeted, lowest targeted) inside the ball is returned.
    """
    if cfg.method not in BLACK_METHODS:
        raise ValueError(f"{cfg.method} is not a black-box method")
    if oracle.kind != "score":
        raise ValueError("black_box_attack needs a score oracle")
    x0 = kernel.as_tensor(x0)
    if cfg.epsilon == 0.0:
        return x0.copy()
    scores = _QueryCounter(oracle.scores, cfg.query_budget)
    estimator = nes_gradient if cfg.method == "nes" else spsa_gradient
    label = cfg.target_class if cfg.targeted else int(y)
    mode = "targeted-loss" if cfg.targeted else "untargeted-loss"
    sign = -1.0 if cfg.targeted else 1.0
    x = x0.copy()
    best, best_loss = x0.copy(), -np.inf if not cfg.targeted else np.inf
    for _ in range(cfg.iterations):
        if scores.remaining() < 2 * cfg.est_samples:
            break
        g = estimator(scores, x, label, mode, cfg.est_samples,
                      cfg.est_radius, rng)
        x = project(x + sign * cfg.step_size * _step_direction(g, cfg.norm),
                    x0, cfg.epsilon, cfg.norm)
        if scores.remaining() < 1:
            break
        loss = _score_loss(scores, x, label)
        better = loss > best_loss if not cfg.targeted else loss < best_loss
        if better:
            best, best_loss = x.copy(), loss
    return best


def run_attack(cfg: AttackConfig, oracle: GradientOracle, x0: np.ndarray,
               y: int, rng: np.random.Generator) -> np.ndarray:
    """Dispatch to the white-box loop or the budgeted black-box loop."""
    if cfg.method in WHITE_METHODS:
        return iterative_gradient_attack(cfg, oracle, x0, y, rng)
    return black_box_attack(cfg, oracle, x0, y, rng)
