"""Heterogeneous model collection and the stochastic ensemble model.

The collection holds (architecture, sigma) smoothed entries plus the plain
(sigma=0 trained) model per architecture. A stochastic ensemble prediction
re-samples its attributes before answering: first the member quantity,
then that many distinct architectures, then a sigma per architecture. The
fixed weighted counterpart (one smoothed model per entry with occurrence
weights) equals the stochastic ensemble in expectation, which
``sem_expectation_oracle`` checks numerically against exact enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Mapping

import numpy as np

from . import nets, smoothing
from .rng import stream
from .smoothing import SmoothedModel, EntryVotePredictor


@dataclass(frozen=True)
class CollectionEntry:
    entry_id: str
    arch_id: str
    sigma: float
    model: nets.Model
    aca: float = float("nan")
    unsmoothable: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.unsmoothable and self.sigma != 0.0:
            raise ValueError("unsmoothable entries carry sigma=0")


@dataclass(frozen=True)
class ModelCollection:
    entries: tuple[CollectionEntry, ...]
    quantity_options: tuple[int, ...]
    plain_models: Mapping[str, nets.Model] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(
            self, "quantity_options",
            tuple(sorted(set(int(q) for q in self.quantity_options))),
        )
        object.__setattr__(self, "plain_models", dict(self.plain_models))
        if not self.entries:
            raise ValueError("collection needs at least one entry")
        keys = [(e.arch_id, e.sigma) for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("(arch_id, sigma) pairs must be unique")
        if not self.quantity_options or self.quantity_options[0] < 1:
            raise ValueError("quantity_options must be positive ints")
        if self.quantity_options[-1] > len(self.arch_ids):
            raise ValueError(
                f"max quantity {self.quantity_options[-1]} exceeds the "
                f"{len(self.arch_ids)} distinct architectures"
            )
        for arch_id, model in self.plain_models.items():
            if model.arch.arch_id != arch_id:
                raise ValueError(f"plain model keyed {arch_id} has wrong arch")

    @property
    def arch_ids(self) -> tuple[str, ...]:
        seen = dict.fromkeys(e.arch_id for e in self.entries)
        return tuple(sorted(seen))

    @property
    def class_count(self) -> int:
        return self.entries[0].model.arch.class_count

    def sigmas_of(self, arch_id: str) -> tuple[float, ...]:
        sigmas = [e.sigma for e in self.entries if e.arch_id == arch_id]
        if not sigmas:
            raise KeyError(f"no entries for architecture {arch_id!r}")
        return tuple(sorted(sigmas))

    def entry(self, arch_id: str, sigma: float) -> CollectionEntry:
        for e in self.entries:
            if e.arch_id == arch_id and e.sigma == sigma:
                return e
        raise KeyError(f"no entry ({arch_id!r}, sigma={sigma})")

    def smoothed(self, arch_id: str, sigma: float,
                 noise_samples: int = 32) -> SmoothedModel:
        e = self.entry(arch_id, sigma)
        return SmoothedModel(e.model, e.sigma, noise_samples)

    def restrict(self, arch_ids) -> "ModelCollection":
        """Sub-collection over the given architectures (all their sigmas)."""
        wanted = set(arch_ids)
        missing = wanted - set(self.arch_ids)
        if missing:
            raise KeyError(f"unknown architectures {sorted(missing)}")
        entries = tuple(e for e in self.entries if e.arch_id in wanted)
        qmax = len(wanted)
        quantities = tuple(q for q in self.quantity_options if q <= qmax)
        return ModelCollection(
            entries, quantities or (qmax,),
            {a: m for a, m in self.plain_models.items() if a in wanted},
        )


@dataclass(frozen=True)
class EnsembleAttributes:
    quantity: int
    picks: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "picks", tuple((str(a), float(s)) for a, s in self.picks)
        )
        if self.quantity != len(self.picks):
            raise ValueError("quantity must equal the number of picks")
        archs = [a for a, _ in self.picks]
        if len(set(archs)) != len(archs):
            raise ValueError("picked architectures must be distinct")

    def validate_against(self, c: ModelCollection) -> None:
        if self.quantity not in c.quantity_options:
            raise ValueError(
                f"quantity {self.quantity} not in {c.quantity_options}"
            )
        for arch_id, sigma in self.picks:
            c.entry(arch_id, sigma)


def sample_attributes(c: ModelCollection,
                      rng: np.random.Generator) -> EnsembleAttributes:
    """One attribute draw: quantity, then distinct architectures, then a
    sigma per architecture, each level uniform."""
    quantity = int(rng.choice(c.quantity_options))
    arch_ids = list(rng.choice(c.arch_ids, size=quantity, replace=False))
    picks = []
    for arch_id in arch_ids:
        sigma = float(rng.choice(c.sigmas_of(arch_id)))
        picks.append((arch_id, sigma))
    return EnsembleAttributes(quantity, tuple(picks))


def sem_predict(c: ModelCollection, attrs: EnsembleAttributes, x, m: int,
                rng: np.random.Generator) -> np.ndarray:
    """Mean over picked members of the smoothed soft prediction."""
    attrs.validate_against(c)
    out = None
    for arch_id, sigma in attrs.picks:
        p = smoothing.smoothed_soft_predict(c.smoothed(arch_id, sigma), x, m, rng)
        out = p if out is None else out + p
    return out / attrs.quantity


def sween_predict(c: ModelCollection, weights, x, m: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Fixed weighted smoothed ensemble over all entries."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(c.entries),):
        raise ValueError(
            f"need one weight per entry ({len(c.entries)}), got {weights.shape}"
        )
    if weights.min() < 0 or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    out = np.zeros(c.class_count)
    for w, e in zip(weights, c.entries):
        if w == 0.0:
            continue
        sm = SmoothedModel(e.model, e.sigma)
        out += w * smoothing.smoothed_soft_predict(sm, x, m, rng)
    return out


def occurrence_weights(c: ModelCollection) -> np.ndarray:
    """Exact per-entry occurrence weights of the attribute sampler.

    Enumerates the full sampling tree: every quantity, every architecture
    subset of that size, every sigma assignment; each leaf contributes its
    probability divided by the member count to each picked entry. These are
    the weights that make the fixed weighted ensemble the expectation of
    the stochastic one.
    """
    arch_ids = c.arch_ids
    n = len(arch_ids)
    index = {(e.arch_id, e.sigma): i for i, e in enumerate(c.entries)}
    weights = np.zeros(len(c.entries))
    q_prob = 1.0 / len(c.quantity_options)
    for quantity in c.quantity_options:
        subset_prob = q_prob / comb(n, quantity)
        for subset in itertools.combinations(arch_ids, quantity):
            sigma_lists = [c.sigmas_of(a) for a in subset]
            assign_prob = subset_prob / float(
                np.prod([len(s) for s in sigma_lists])
            )
            for sigmas in itertools.product(*sigma_lists):
                for arch_id, sigma in zip(subset, sigmas):
                    weights[index[(arch_id, sigma)]] += assign_prob / quantity
    return weights


@dataclass(frozen=True)
class ExpectationGap:
    mean_sem: np.ndarray
    sween_ref: np.ndarray
    max_abs_gap: float
    gap_se_units: float


def sem_expectation_oracle(c: ModelCollection, x, draws: int, m: int,
                           rng: np.random.Generator,
                           ref_reps: int | None = None) -> ExpectationGap:
    """Monte-Carlo check that the stochastic ensemble matches its fixed
    weighted counterpart in expectation.

    mean_sem averages `draws` independent attribute draws; sween_ref
    averages `ref_reps` weighted-ensemble evaluations with exact occurrence
    weights. gap_se_units is the largest componentwise |gap| measured in
    combined standard errors of the two estimates.
    """
    if draws < 1:
        raise ValueError("draws must be at least 1")
    if ref_reps is None:
        ref_reps = max(1, draws // 50)
    k = c.class_count
    sem_sum = np.zeros(k)
    sem_sq = np.zeros(k)
    for _ in range(draws):
        attrs = sample_attributes(c, rng)
        p = sem_predict(c, attrs, x, m, rng)
        sem_sum += p
        sem_sq += p * p
    mean_sem = sem_sum / draws
    var_sem = np.maximum(sem_sq / draws - mean_sem**2, 0.0)
    se_sem = np.sqrt(var_sem / draws)

    weights = occurrence_weights(c)
    ref_sum = np.zeros(k)
    ref_sq = np.zeros(k)
    for _ in range(ref_reps):
        p = sween_predict(c, weights, x, m, rng)
        ref_sum += p
        ref_sq += p * p
    sween_ref = ref_sum / ref_reps
    var_ref = np.maximum(ref_sq / ref_reps - sween_ref**2, 0.0)
    se_ref = np.sqrt(var_ref / ref_reps)

    gap = np.abs(mean_sem - sween_ref)
    se = np.sqrt(se_sem**2 + se_ref**2)
    if np.any((se == 0) & (gap > 0)):
        units = float("inf")
    else:
        units = float(np.max(gap / np.maximum(se, 1e-300), initial=0.0))
    return ExpectationGap(mean_sem, sween_ref, float(gap.max()), units)


# ---------------------------------------------------------------------------
# collection assembly

def build_collection(dataset, archs, sigma_grid, quantity_options,
                     epochs: int, lr: float, seed: int,
                     aca_trials: int = smoothing.DEFAULT_VOTE_TRIALS,
                     alpha: float = smoothing.DEFAULT_ALPHA,
                     batch_size: int = 32,
                     heterogeneous: bool = True) -> ModelCollection:
    """Train the zoo across the sigma grid into a ModelCollection.

    Per architecture: a plain (sigma=0) model is always trained for the
    fixed-ensemble baselines; each sigma entry is trained with that input
    noise and scored by ACA on the test split. Entries whose ACA is at or
    below chance+0.05 are unsmoothable and collapse to a single sigma=0
    entry backed by the plain model.
    """
    if heterogeneous:
        nets.check_heterogeneous(archs)
    if isinstance(sigma_grid, dict):
        grid = {a.arch_id: tuple(sigma_grid[a.arch_id]) for a in archs}
    else:
        grid = {a.arch_id: tuple(sigma_grid) for a in archs}
    test_x, test_y = dataset.test()
    chance = 1.0 / dataset.class_count
    entries = []
    plain_models = {}
    for arch in archs:
        init = nets.build_model(arch, seed)
        plain = nets.train(
            init, dataset, 0.0, epochs, lr,
            stream(seed, "train", arch.arch_id, "plain"),
            batch_size=batch_size,
        )
        plain_models[arch.arch_id] = plain
        arch_entries = []
        failed = False
        for sigma in grid[arch.arch_id]:
            if sigma <= 0:
                raise ValueError("sigma grid must be positive; the plain "
                                 "model is trained separately")
            model = nets.train(
                init, dataset, sigma, epochs, lr,
                stream(seed, "train", arch.arch_id, f"sigma={sigma}"),
                batch_size=batch_size,
            )
            sm = SmoothedModel(model, sigma)
            aca = smoothing.approximated_certified_accuracy(
                EntryVotePredictor(sm, arch.class_count),
                test_x, test_y, aca_trials, alpha,
                stream(seed, "aca", arch.arch_id, f"sigma={sigma}"),
            )
            if aca <= chance + 0.05:
                failed = True
                continue
            arch_entries.append(CollectionEntry(
                f"{arch.arch_id}:s{sigma}", arch.arch_id, float(sigma),
                model, aca, False,
            ))
        if failed or not arch_entries:
            # keep the architecture through its plain model
            plain_aca = smoothing.approximated_certified_accuracy(
                EntryVotePredictor(SmoothedModel(plain, 0.0),
                                   arch.class_count),
                test_x, test_y, aca_trials, alpha,
                stream(seed, "aca", arch.arch_id, "plain"),
            )
            arch_entries.append(CollectionEntry(
                f"{arch.arch_id}:plain", arch.arch_id, 0.0, plain,
                plain_aca, True,
            ))
        entries.extend(arch_entries)
    return ModelCollection(tuple(entries), tuple(quantity_options),
                           plain_models)
