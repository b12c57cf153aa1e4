"""Attack-success judging, ASR estimation, distortion search, curves,
and the ensemble-attribute ablations.

Success of one adversarial example is decided by an N-trial Monte-Carlo
vote of the defense: an untargeted attack succeeds when the top vote is
not the true class or the non-top vote mass reaches the abstention
threshold; a targeted attack succeeds when the top vote is the target or
the target's vote mass reaches the threshold. ASR-vs-distortion curves
fold per-sample minimal distortions (coarse grid + bisection) into a
cumulative curve, which must agree with direct per-epsilon re-attacks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ensemble, nets, smoothing, threat
from .attacks import (AttackConfig, BLACK_METHODS, WHITE_METHODS,
                      attack_config, run_attack)
from .rng import stream
from .smoothing import VoteResult, hard_vote

EPS_MAX_DEFAULTS = {"linf": 0.5, "l2": 4.0}

REASONS = ("misclassified", "abstained", "target-hit", "target-mass", "none")


@dataclass(frozen=True)
class SuccessJudgment:
    success: bool
    vote: VoteResult
    reason: str

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.success != (self.reason != "none"):
            raise ValueError("success must mean a reason other than none")


def default_target(y: int, class_count: int) -> int:
    """The fixed target convention for targeted runs: the next class."""
    return (int(y) + 1) % class_count


def judge_success(defense, x_adv, y: int, targeted: bool,
                  y_target: Optional[int], n_trials: int, alpha: float,
                  rng: np.random.Generator) -> SuccessJudgment:
    """Vote the defense N times on x_adv and decide attack success."""
    if targeted and y_target is None:
        raise ValueError("targeted judgment needs y_target")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0,1)")
    vote = hard_vote(defense, x_adv, n_trials, rng, alpha)
    if targeted:
        if vote.top_class == int(y_target):
            return SuccessJudgment(True, vote, "target-hit")
        target_mass = (vote.counts[int(y_target)] / vote.n_trials
                       if int(y_target) < len(vote.counts) else 0.0)
        if target_mass >= alpha - 1e-12:
            return SuccessJudgment(True, vote, "target-mass")
        return SuccessJudgment(False, vote, "none")
    if vote.top_class != int(y):
        return SuccessJudgment(True, vote, "misclassified")
    if vote.abstained:
        return SuccessJudgment(True, vote, "abstained")
    return SuccessJudgment(False, vote, "none")


def _check_scenario_method(scenario, cfg: AttackConfig) -> None:
    white = cfg.method in WHITE_METHODS
    if white and scenario.spec.attack_family != "white-transfer":
        raise ValueError(
            f"scenario {scenario.id} is score-based; {cfg.method} needs "
            "a white-box scenario"
        )
    if not white and scenario.spec.attack_family != "black-score":
        raise ValueError(
            f"scenario {scenario.id} is white-box; {cfg.method} needs "
            "a score-based scenario"
        )


def _resolve_target(cfg: AttackConfig, y: int, class_count: int):
    if not cfg.targeted:
        return cfg, None
    if cfg.target_class is not None and cfg.target_class >= 0:
        return cfg, cfg.target_class
    target = default_target(y, class_count)
    return replace(cfg, target_class=target), target


def with_epsilon(cfg: AttackConfig, epsilon: float) -> AttackConfig:
    """Copy cfg at a new epsilon, rescaling step_size proportionally (or
    refilling the method default when the template had epsilon 0)."""
    if epsilon == cfg.epsilon:
        return cfg
    if epsilon == 0.0:
        return replace(cfg, epsilon=0.0)
    if cfg.epsilon > 0:
        step = cfg.step_size * (epsilon / cfg.epsilon)
    else:
        step = epsilon if cfg.method == "fgsm" else 2.5 * epsilon / cfg.iterations
    return replace(cfg, epsilon=float(epsilon), step_size=float(step))


def attack_and_judge(scenario, cfg: AttackConfig, x, y: int, n_trials: int,
                     alpha: float, attack_rng, judge_rng) -> SuccessJudgment:
    """One attack run against a fresh oracle, then one N-trial judgment."""
    _check_scenario_method(scenario, cfg)
    cfg, y_target = _resolve_target(cfg, y, scenario.class_count)
    if cfg.epsilon == 0.0:
        x_adv = np.asarray(x, dtype=np.float64)
    else:
        oracle = scenario.make_oracle(attack_rng)
        x_adv = run_attack(cfg, oracle, x, y, attack_rng)
    return judge_success(scenario.defense, x_adv, y, cfg.targeted, y_target,
                         n_trials, alpha, judge_rng)


def asr_at_epsilon(scenario, cfg: AttackConfig, images, labels,
                   n_trials: int, alpha: float, seed: int,
                   workers: int = 1) -> tuple[float, float]:
    """Mean attack success over a labeled set, with binomial standard
    error. Seed-reproducible: every sample uses its own derived streams."""
    if len(images) == 0:
        raise ValueError("empty evaluation set")

    def one(i):
        return attack_and_judge(
            scenario, cfg, images[i], int(labels[i]), n_trials, alpha,
            stream(seed, "asr", scenario.id, i, "attack"),
            stream(seed, "asr", scenario.id, i, "judge"),
        ).success

    hits = _map_indexed(one, len(images), workers)
    asr = float(np.mean(hits))
    se = math.sqrt(asr * (1.0 - asr) / len(images))
    return asr, se


def _map_indexed(fn, n: int, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def min_distortion_search(scenario, cfg: AttackConfig, x, y: int, *,
                          sample_tag, seed: int, n_trials: int, alpha: float,
                          coarse_steps: int = 10, binary_steps: int = 20,
                          eps_max: Optional[float] = None) -> Optional[float]:
    """Smallest epsilon at which the attack succeeds, or None.

    Probes epsilon=0 first (clean failures have zero minimal distortion),
    then sweeps `coarse_steps` equispaced epsilons up to eps_max for the
    first success, then bisects the bracketing interval `binary_steps`
    times. Every probe is one attack run plus one judgment on independent
    streams derived from (sample_tag, probe index).
    """
    if coarse_steps < 1 or binary_steps < 0:
        raise ValueError("need coarse_steps >= 1 and binary_steps >= 0")
    if eps_max is None:
        eps_max = EPS_MAX_DEFAULTS[cfg.norm]
    probe_index = 0

    def probe(eps: float) -> bool:
        nonlocal probe_index
        probe_index += 1
        return attack_and_judge(
            scenario, with_epsilon(cfg, eps), x, y, n_trials, alpha,
            stream(seed, "search", scenario.id, sample_tag, probe_index, "attack"),
            stream(seed, "search", scenario.id, sample_tag, probe_index, "judge"),
        ).success

    if probe(0.0):
        return 0.0
    lo, hi = 0.0, None
    for j in range(1, coarse_steps + 1):
        eps = eps_max * j / coarse_steps
        if probe(eps):
            hi = eps
            break
        lo = eps
    if hi is None:
        return None
    for _ in range(binary_steps):
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CurvePoint:
    epsilon: float
    asr: float
    n: int
    se: float


@dataclass(frozen=True)
class Curve:
    points: tuple[CurvePoint, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("curve needs at least one point")
        eps = [p.epsilon for p in self.points]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly increasing")
        for p in self.points:
            if not 0.0 <= p.asr <= 1.0:
                raise ValueError("asr must be in [0,1]")

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([p.epsilon for p in self.points])

    @property
    def asrs(self) -> np.ndarray:
        return np.array([p.asr for p in self.points])

    @property
    def ses(self) -> np.ndarray:
        return np.array([p.se for p in self.points])


def fold_distortions(distortions, grid, meta) -> Curve:
    """Cumulative curve: asr(eps) = fraction of minimal distortions <= eps
    (None counts as never succeeding)."""
    if len(grid) == 0:
        raise ValueError("empty epsilon grid")
    dists = np.array(
        [np.inf if d is None else float(d) for d in distortions]
    )
    n = len(dists)
    if n == 0:
        raise ValueError("no samples to fold")
    points = []
    for eps in grid:
        asr = float(np.mean(dists <= eps + 1e-12))
        points.append(CurvePoint(float(eps), asr, n,
                                 math.sqrt(asr * (1 - asr) / n)))
    return Curve(tuple(points), dict(meta))


def build_curve(scenario, cfg: AttackConfig, images, labels, grid, *,
                n_trials: int, alpha: float, seed: int,
                coarse_steps: int = 10, binary_steps: int = 20,
                eps_max: Optional[float] = None,
                workers: int = 1) -> Curve:
    """Per-sample minimal distortions folded into a cumulative ASR curve."""
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    grid = [float(e) for e in grid]
    if sorted(grid) != grid or len(set(grid)) != len(grid):
        raise ValueError("epsilon grid must be strictly increasing")
    if eps_max is None:
        eps_max = EPS_MAX_DEFAULTS[cfg.norm]

    def one(i):
        return min_distortion_search(
            scenario, cfg, images[i], int(labels[i]), sample_tag=i,
            seed=seed, n_trials=n_trials, alpha=alpha,
            coarse_steps=coarse_steps, binary_steps=binary_steps,
            eps_max=eps_max,
        )

    distortions = _map_indexed(one, len(images), workers)
    meta = {
        "scenario": scenario.id,
        "attack": cfg.method,
        "targeted": cfg.targeted,
        "norm": cfg.norm,
        "N": n_trials,
        "alpha": alpha,
        "seed": seed,
    }
    return fold_distortions(distortions, grid, meta)


def eval_subset(dataset, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """A seeded class-mixed slice of the test split."""
    images, labels = dataset.test()
    if count > len(images):
        raise ValueError(
            f"requested {count} samples, test split has {len(images)}"
        )
    order = stream(seed, "eval-subset").permutation(len(images))[:count]
    return images[order], labels[order]


# ---------------------------------------------------------------------------
# ablations

HOMOGENEOUS_SIGMAS = (0.12, 0.15, 0.25, 0.5, 0.75, 1.0, 1.25)
QUANTITY_HIGH = (6, 7, 8)
ABLATION_MODES = ("quantity-high", "homogeneous")


@dataclass(frozen=True)
class AblationBase:
    """Everything an ablation pair needs: the trained baseline collection,
    its dataset (variant collections retrain from it), the attack template,
    and the shared evaluation protocol."""

    dataset: object
    collection: ensemble.ModelCollection
    attack: AttackConfig
    grid: tuple[float, ...]
    n_trials: int
    alpha: float
    sample_count: int
    seed: int
    epochs: int
    lr: float
    coarse_steps: int = 10
    binary_steps: int = 20
    eps_max: Optional[float] = None
    homogeneous_variants: int = 3
    defense: threat.DefenseConfig = field(default_factory=threat.DefenseConfig)
    workers: int = 1


def homogeneous_collection(base: AblationBase) -> ensemble.ModelCollection:
    """One architecture trained at the seven sigma values, replicated as
    seed-varied variants so the sampler still has distinct members."""
    arch_id, _ = threat.designated_single(base.collection,
                                          base.defense.designated_arch)
    proto = base.collection.plain_models[arch_id].arch
    variants = []
    for v in range(base.homogeneous_variants):
        variants.append(nets.ArchitectureSpec(
            f"{proto.arch_id}#v{v}", proto.layers, proto.input_shape,
            proto.class_count,
        ))
    quantities = tuple(
        q for q in base.collection.quantity_options if q <= len(variants)
    )
    if not quantities:
        raise ValueError(
            f"{base.homogeneous_variants} variants cannot support quantity "
            f"options {base.collection.quantity_options}"
        )
    return ensemble.build_collection(
        base.dataset, variants, HOMOGENEOUS_SIGMAS, quantities,
        epochs=base.epochs, lr=base.lr, seed=base.seed,
        alpha=base.alpha, heterogeneous=False,
    )


def quantity_high_collection(base: AblationBase) -> ensemble.ModelCollection:
    """The same trained zoo with quantity options 6, 7, 8."""
    n_arch = len(base.collection.arch_ids)
    if n_arch < max(QUANTITY_HIGH):
        raise ValueError(
            f"quantity-high ablation needs >= {max(QUANTITY_HIGH)} "
            f"architectures, collection has {n_arch}"
        )
    return ensemble.ModelCollection(
        base.collection.entries, QUANTITY_HIGH, base.collection.plain_models
    )


def ablation_run(mode: str, base: AblationBase) -> tuple[Curve, Curve]:
    """(baseline SEM curve, ablated SEM curve) under the fresh-attribute
    white-box attacker, on the same samples and protocol."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"mode must be one of {ABLATION_MODES}")
    if mode == "quantity-high":
        variant = quantity_high_collection(base)
    else:
        variant = homogeneous_collection(base)
    images, labels = eval_subset(base.dataset, base.sample_count, base.seed)
    curves = []
    for label_, coll in (("baseline", base.collection), (mode, variant)):
        scenario = threat.build_scenario("A", coll, base.seed, base.defense)
        curve = build_curve(
            scenario, base.attack, images, labels, base.grid,
            n_trials=base.n_trials, alpha=base.alpha, seed=base.seed,
            coarse_steps=base.coarse_steps, binary_steps=base.binary_steps,
            eps_max=base.eps_max, workers=base.workers,
        )
        meta = dict(curve.meta)
        meta["variant"] = label_
        curves.append(Curve(curve.points, meta))
    return curves[0], curves[1]
