"""Attacker scenarios A-E and baseline contrasts F-M.

Each scenario binds two things: the surrogate oracle the attacker optimizes
against (a gradient channel or a score channel) and the defense predictor
whose verdict is judged. The defense is built only from the collection and
the defense config; it never sees the attacker's oracle, which keeps the
wiring one-directional by construction.

  A  full library, fresh ensemble attributes every gradient query
  B  full library, attributes frozen once per attack run
  C  half library, fresh sub-ensemble attributes every query
  D  half library, fixed plain average ensemble (no resampling)
  E  score queries against the live stochastic-ensemble defense
  F-I  white-box self-attacks on: ensemble-smoothed / smoothed-single /
       ensemble-plain / single-plain
  J-M  score-based counterparts of F-I
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernel, nets, smoothing
from .attacks import GradientOracle
from .ensemble import (EnsembleAttributes, ModelCollection,
                       sample_attributes, sem_predict, sween_predict)
from .rng import split, stream
from .smoothing import SmoothedModel, softmax

SCENARIO_IDS = tuple("ABCDEFGHIJKLM")

DEFENSES = ("sem", "ensemble-smoothed", "smoothed-single", "ensemble-plain",
            "single-plain")


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    library_knowledge: str   # full | half | none
    attribute_access: str    # per-iteration | per-attack | none
    defense: str             # one of DEFENSES
    attack_family: str       # white-transfer | black-score

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario id {self.id!r}")
        if self.library_knowledge not in ("full", "half", "none"):
            raise ValueError(f"bad library_knowledge {self.library_knowledge!r}")
        if self.attribute_access not in ("per-iteration", "per-attack", "none"):
            raise ValueError(f"bad attribute_access {self.attribute_access!r}")
        if self.defense not in DEFENSES:
            raise ValueError(f"bad defense {self.defense!r}")
        if self.attack_family not in ("white-transfer", "black-score"):
            raise ValueError(f"bad attack_family {self.attack_family!r}")


SCENARIO_TABLE: dict[str, ScenarioSpec] = {
    "A": ScenarioSpec("A", "full", "per-iteration", "sem", "white-transfer"),
    "B": ScenarioSpec("B", "full", "per-attack", "sem", "white-transfer"),
    "C": ScenarioSpec("C", "half", "per-iteration", "sem", "white-transfer"),
    "D": ScenarioSpec("D", "half", "none", "sem", "white-transfer"),
    "E": ScenarioSpec("E", "none", "none", "sem", "black-score"),
    "F": ScenarioSpec("F", "full", "none", "ensemble-smoothed", "white-transfer"),
    "G": ScenarioSpec("G", "full", "none", "smoothed-single", "white-transfer"),
    "H": ScenarioSpec("H", "full", "none", "ensemble-plain", "white-transfer"),
    "I": ScenarioSpec("I", "full", "none", "single-plain", "white-transfer"),
    "J": ScenarioSpec("J", "none", "none", "ensemble-smoothed", "black-score"),
    "K": ScenarioSpec("K", "none", "none", "smoothed-single", "black-score"),
    "L": ScenarioSpec("L", "none", "none", "ensemble-plain", "black-score"),
    "M": ScenarioSpec("M", "none", "none", "single-plain", "black-score"),
}


@dataclass(frozen=True)
class DefenseConfig:
    member_noise_samples: int = 8  # noise draws per smoothed member, prediction
    attack_noise_samples: int = 8  # noise draws per member inside surrogate grads
    designated_arch: str | None = None  # single-model baselines; None = best

    def __post_init__(self):
        if self.member_noise_samples < 1 or self.attack_noise_samples < 1:
            raise ValueError("noise sample counts must be positive")


@dataclass(frozen=True)
class HalfLibrary:
    arch_ids: tuple[str, ...]
    entry_ids: tuple[str, ...]
    seed: int


def half_library(collection: ModelCollection, seed: int) -> HalfLibrary:
    """Seed-deterministic pick of ceil(n/2) architectures with all their
    sigma entries."""
    arch_ids = collection.arch_ids
    n = math.ceil(len(arch_ids) / 2)
    rng = stream(seed, "half-library")
    picked = tuple(sorted(rng.choice(arch_ids, size=n, replace=False)))
    entry_ids = tuple(
        e.entry_id for e in collection.entries if e.arch_id in picked
    )
    return HalfLibrary(picked, entry_ids, seed)


def smoothed_input_grad(model: nets.Model, sigma: float, x: np.ndarray,
                        label: int, mode: str, m: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo gradient of the smoothed cross-entropy: the average of
    per-noise-draw input gradients. sigma=0 is the plain gradient."""
    if sigma == 0.0:
        return nets.input_grad(model, x, label, mode)
    noise = kernel.gaussian_sample((m,) + x.shape, sigma, rng)
    return nets.input_grads_batch(model, x[None] + noise, label).mean(axis=0)


def smoothed_grad_and_prob(model: nets.Model, sigma: float, x: np.ndarray,
                           label: int, m: int,
                           rng: np.random.Generator
                           ) -> tuple[np.ndarray, float]:
    """Draw-averaged cross-entropy input gradient plus the smoothed softmax
    probability of `label`, from the same noise draws."""
    if sigma == 0.0:
        grads, probs = nets.ce_grads_and_probs(model, x[None], label)
        return grads[0], float(probs[0])
    noise = kernel.gaussian_sample((m,) + x.shape, sigma, rng)
    grads, probs = nets.ce_grads_and_probs(model, x[None] + noise, label)
    return grads.mean(axis=0), float(probs.mean())


def ensemble_loss_grad(members, x: np.ndarray, label: int, mode: str, m: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Gradient of the cross-entropy of the member-averaged probability.

    Writing p_k for member k's (smoothed) probability of `label` and g_k for
    its cross-entropy gradient, d(-log mean_k p_k)/dx = sum_k p_k g_k / sum_k
    p_k: members already confidently broken carry no weight, so the attack
    budget concentrates on the members still voting `label`. Falls back to
    the plain mean when every member has zero mass on `label`.

    members: iterable of (model, sigma) pairs. Untargeted and targeted modes
    share the formula (only the sign usage in the attack loop differs).
    """
    if mode not in nets.GRAD_MODES:
        raise ValueError(f"mode must be one of {nets.GRAD_MODES}, got {mode!r}")
    x = kernel.as_tensor(x)
    grads, probs = [], []
    for model, sigma in members:
        g, p = smoothed_grad_and_prob(model, sigma, x, label, m, rng)
        grads.append(g)
        probs.append(p)
    total = float(sum(probs))
    if total <= 0.0:
        return np.mean(grads, axis=0)
    out = np.zeros_like(x)
    for g, p in zip(grads, probs):
        out += (p / total) * g
    return out


# ---------------------------------------------------------------------------
# defense predictors
#
# All predictors are stateless given an rng: they expose
#   __call__(x, rng) -> class
#   soft(x, rng) -> probability vector
#   predict_classes(x, n, rng) -> n hard votes (batched)

class SemPredictor:
    """Fresh ensemble attributes before every prediction."""

    def __init__(self, collection: ModelCollection, cfg: DefenseConfig):
        self.collection = collection
        self.cfg = cfg
        self.class_count = collection.class_count

    def soft(self, x, rng):
        attrs = sample_attributes(self.collection, rng)
        return sem_predict(self.collection, attrs, x,
                           self.cfg.member_noise_samples, rng)

    def __call__(self, x, rng):
        return int(np.argmax(self.soft(x, rng)))

    def predict_classes(self, x, n, rng):
        c, m = self.collection, self.cfg.member_noise_samples
        x = kernel.as_tensor(x)
        draws = [sample_attributes(c, rng) for _ in range(n)]
        by_entry: dict[tuple[str, float], list[int]] = {}
        for vote, attrs in enumerate(draws):
            for pick in attrs.picks:
                by_entry.setdefault(pick, []).append(vote)
        probs = np.zeros((n, self.class_count))
        for key in sorted(by_entry):
            votes = by_entry[key]
            entry = c.entry(*key)
            if entry.sigma == 0.0:
                p = softmax(nets.predict_logits(entry.model, x)[None])[0]
                probs[votes] += p
            else:
                noise = kernel.gaussian_sample(
                    (len(votes) * m,) + x.shape, entry.sigma, rng
                )
                logits = nets.predict_logits_batch(entry.model, x[None] + noise)
                member = softmax(logits).reshape(len(votes), m, -1).mean(axis=1)
                probs[votes] += member
        quantities = np.array([a.quantity for a in draws], dtype=np.float64)
        probs /= quantities[:, None]
        return np.argmax(probs, axis=1).astype(np.int64)


class FixedSmoothedEnsemblePredictor:
    """Uniform weighted average of every smoothed entry (no resampling)."""

    def __init__(self, collection: ModelCollection, cfg: DefenseConfig):
        self.collection = collection
        self.cfg = cfg
        self.class_count = collection.class_count
        self.weights = np.full(len(collection.entries),
                               1.0 / len(collection.entries))

    def soft(self, x, rng):
        return sween_predict(self.collection, self.weights, x,
                             self.cfg.member_noise_samples, rng)

    def __call__(self, x, rng):
        return int(np.argmax(self.soft(x, rng)))

    def predict_classes(self, x, n, rng):
        m = self.cfg.member_noise_samples
        x = kernel.as_tensor(x)
        probs = np.zeros((n, self.class_count))
        for w, entry in zip(self.weights, self.collection.entries):
            if entry.sigma == 0.0:
                p = softmax(nets.predict_logits(entry.model, x)[None])[0]
                probs += w * p
            else:
                noise = kernel.gaussian_sample(
                    (n * m,) + x.shape, entry.sigma, rng
                )
                logits = nets.predict_logits_batch(entry.model, x[None] + noise)
                probs += w * softmax(logits).reshape(n, m, -1).mean(axis=1)
        return np.argmax(probs, axis=1).astype(np.int64)


class SmoothedSinglePredictor:
    """One designated smoothed entry."""

    def __init__(self, sm: SmoothedModel, cfg: DefenseConfig):
        self.sm = sm
        self.cfg = cfg
        self.class_count = sm.base.arch.class_count

    def soft(self, x, rng):
        return smoothing.smoothed_soft_predict(
            self.sm, x, self.cfg.member_noise_samples, rng
        )

    def __call__(self, x, rng):
        return int(np.argmax(self.soft(x, rng)))

    def predict_classes(self, x, n, rng):
        m = self.cfg.member_noise_samples
        x = kernel.as_tensor(x)
        if self.sm.sigma == 0.0:
            cls = int(np.argmax(nets.predict_logits(self.sm.base, x)))
            return np.full(n, cls, dtype=np.int64)
        noise = kernel.gaussian_sample((n * m,) + x.shape, self.sm.sigma, rng)
        logits = nets.predict_logits_batch(self.sm.base, x[None] + noise)
        probs = softmax(logits).reshape(n, m, -1).mean(axis=1)
        return np.argmax(probs, axis=1).astype(np.int64)


class PlainEnsemblePredictor:
    """Deterministic mean softmax of the plain (sigma=0 trained) models."""

    def __init__(self, models: list[nets.Model]):
        if not models:
            raise ValueError("need at least one plain model")
        self.models = list(models)
        self.class_count = models[0].arch.class_count

    def soft(self, x, rng=None):
        x = kernel.as_tensor(x)
        out = np.zeros(self.class_count)
        for model in self.models:
            out += softmax(nets.predict_logits(model, x)[None])[0]
        return out / len(self.models)

    def __call__(self, x, rng=None):
        return int(np.argmax(self.soft(x)))

    def predict_classes(self, x, n, rng=None):
        return np.full(n, self(x), dtype=np.int64)


class PlainSinglePredictor:
    """Deterministic single plain model."""

    def __init__(self, model: nets.Model):
        self.model = model
        self.class_count = model.arch.class_count

    def soft(self, x, rng=None):
        return softmax(nets.predict_logits(self.model, kernel.as_tensor(x))[None])[0]

    def __call__(self, x, rng=None):
        return int(np.argmax(nets.predict_logits(self.model, x)))

    def predict_classes(self, x, n, rng=None):
        return np.full(n, self(x), dtype=np.int64)


def bind_rng(predictor, rng: np.random.Generator):
    """Close a stateless predictor over a private stream: x -> class."""

    def bound(x):
        return predictor(x, rng)

    bound.soft = lambda x: predictor.soft(x, rng)
    bound.predict_classes = lambda x, n, r=None: predictor.predict_classes(
        x, n, r if r is not None else rng
    )
    bound.class_count = predictor.class_count
    return bound


# ---------------------------------------------------------------------------
# surrogate oracles

@dataclass(frozen=True)
class SurrogateOracle(GradientOracle):
    """GradientOracle that logs every ensemble-attribute draw it makes."""

    attribute_draws: list = field(default_factory=list)


def designated_single(collection: ModelCollection,
                      arch_id: str | None = None
                      ) -> tuple[str, tuple[str, float]]:
    """(plain arch_id, smoothed (arch_id, sigma)) for the single-model
    baselines: the plain model with the best clean accuracy (or the one
    fixed by `arch_id`), and the best ACA smoothed entry of that
    architecture (any architecture if it has none)."""

    def plain_acc(aid):
        meta = collection.plain_models[aid].train_meta
        return meta.get("clean_accuracy", 0.0)

    if arch_id is not None:
        if arch_id not in collection.arch_ids:
            raise KeyError(
                f"designated architecture {arch_id!r} is not in the "
                f"collection {collection.arch_ids}"
            )
        best_arch = arch_id
    elif collection.plain_models:
        best_arch = max(sorted(collection.plain_models), key=plain_acc)
    else:
        best_arch = collection.arch_ids[0]

    def aca_key(e):
        return (e.aca if np.isfinite(e.aca) else -1.0, e.entry_id)

    smoothed = [e for e in collection.entries
                if e.arch_id == best_arch and e.sigma > 0]
    if not smoothed:
        smoothed = [e for e in collection.entries if e.sigma > 0]
    if not smoothed:
        smoothed = list(collection.entries)
    best_entry = max(smoothed, key=aca_key)
    return best_arch, (best_entry.arch_id, best_entry.sigma)


@dataclass(frozen=True)
class BoundScenario:
    """A scenario wired to a trained collection: oracle and defense
    factories plus the metadata the evaluation layer needs."""

    spec: ScenarioSpec
    collection: ModelCollection
    config: DefenseConfig
    seed: int
    half: HalfLibrary | None

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def class_count(self) -> int:
        return self.collection.class_count

    @cached_property
    def _designated(self):
        return designated_single(self.collection, self.config.designated_arch)

    @cached_property
    def _half_collection(self) -> ModelCollection:
        assert self.half is not None
        return self.collection.restrict(self.half.arch_ids)

    @cached_property
    def defense(self):
        """Stateless defense predictor; independent of any oracle."""
        kind = self.spec.defense
        if kind == "sem":
            return SemPredictor(self.collection, self.config)
        if kind == "ensemble-smoothed":
            return FixedSmoothedEnsemblePredictor(self.collection, self.config)
        if kind == "smoothed-single":
            arch_id, sigma = self._designated[1]
            return SmoothedSinglePredictor(
                self.collection.smoothed(arch_id, sigma), self.config
            )
        if kind == "ensemble-plain":
            models = [self.collection.plain_models[a]
                      for a in sorted(self.collection.plain_models)]
            return PlainEnsemblePredictor(models)
        if kind == "single-plain":
            return PlainSinglePredictor(
                self.collection.plain_models[self._designated[0]]
            )
        raise ValueError(kind)

    def make_defense(self, rng: np.random.Generator):
        """The x -> class function with per-call randomness."""
        return bind_rng(self.defense, rng)

    def _ensemble_grad_on(self, source: ModelCollection,
                          attrs: EnsembleAttributes, x, label, mode,
                          rng) -> np.ndarray:
        """Gradient of the sampled ensemble's loss (cross-entropy of the
        member-averaged probability)."""
        members = [(source.entry(a, s).model, s) for a, s in attrs.picks]
        return ensemble_loss_grad(members, x, label, mode,
                                  self.config.attack_noise_samples, rng)

    def make_oracle(self, rng: np.random.Generator) -> SurrogateOracle:
        """A fresh oracle for one attack run (carries its own streams and,
        for scenario B, the attributes frozen for that run)."""
        attr_rng, noise_rng = split(rng, 2)
        sid = self.spec.id
        log: list = []

        if sid in ("A", "C"):
            source = (self.collection if sid == "A"
                      else self._half_collection)

            def grad(x, label, mode):
                attrs = sample_attributes(source, attr_rng)
                log.append(attrs)
                return self._ensemble_grad_on(source, attrs, x, label, mode,
                                              noise_rng)

            return SurrogateOracle("white", grad=grad, attribute_draws=log)

        if sid == "B":
            fixed = sample_attributes(self.collection, attr_rng)
            log.append(fixed)

            def grad(x, label, mode):
                return self._ensemble_grad_on(self.collection, fixed, x,
                                              label, mode, noise_rng)

            return SurrogateOracle("white", grad=grad, attribute_draws=log)

        if sid == "D":
            models = [self._half_collection.entry(e.arch_id, e.sigma).model
                      for e in self._half_collection.entries]

            def grad(x, label, mode):
                total = np.zeros_like(kernel.as_tensor(x))
                for model in models:
                    total += nets.input_grad(model, x, label, mode)
                return total / len(models)

            return SurrogateOracle("white", grad=grad, attribute_draws=log)

        if self.spec.attack_family == "black-score":
            defense = self.defense

            def scores(x):
                return defense.soft(x, noise_rng)

            return SurrogateOracle("score", scores=scores,
                                   attribute_draws=log)

        # white-box self-attacks F-I
        defense_kind = self.spec.defense
        m = self.config.attack_noise_samples

        if defense_kind == "ensemble-smoothed":
            members = [(e.model, e.sigma) for e in self.collection.entries]

            def grad(x, label, mode):
                return ensemble_loss_grad(members, x, label, mode, m,
                                          noise_rng)

        elif defense_kind == "smoothed-single":
            arch_id, sigma = self._designated[1]
            model = self.collection.entry(arch_id, sigma).model

            def grad(x, label, mode):
                return smoothed_input_grad(model, sigma, x, label, mode, m,
                                           noise_rng)

        elif defense_kind == "ensemble-plain":
            members = [(self.collection.plain_models[a], 0.0)
                       for a in sorted(self.collection.plain_models)]

            def grad(x, label, mode):
                return ensemble_loss_grad(members, x, label, mode, m,
                                          noise_rng)

        elif defense_kind == "single-plain":
            model = self.collection.plain_models[self._designated[0]]

            def grad(x, label, mode):
                return nets.input_grad(model, x, label, mode)

        else:
            raise ValueError(f"no white-box oracle for defense {defense_kind}")

        return SurrogateOracle("white", grad=grad, attribute_draws=log)


def build_scenario(scenario_id: str, collection: ModelCollection, seed: int,
                   config: DefenseConfig | None = None) -> BoundScenario:
    """Wire one scenario id to a trained collection."""
    if scenario_id not in SCENARIO_TABLE:
        raise ValueError(
            f"unknown scenario {scenario_id!r}; expected one of "
            f"{''.join(SCENARIO_IDS)}"
        )
    spec = SCENARIO_TABLE[scenario_id]
    config = config or DefenseConfig()
    half = (half_library(collection, seed)
            if spec.library_knowledge == "half" else None)
    return BoundScenario(spec, collection, config, seed, half)
