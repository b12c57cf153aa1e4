"""Acceptance gate: nine criteria, one [PASS]/[FAIL] line each.

Every criterion is checked at its stated tolerance and runtime budget.
The qualitative-ordering criteria (7, 8) run the full Figure-3-analogue
protocol: 200 test samples, the default seven-architecture collection
(eight for the quantity ablation), untargeted BIM, cumulative curves
from per-sample minimal-distortion searches, all seeds fixed. Error-bar
separation means the gap exceeds the sum of the two plug-in standard
errors; orderings are evaluated only where the bars separate.
"""

import io
import json
import os
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import norm as scipy_norm

from semlab import (attacks, data, emit, ensemble, evaluation, kernel, nets,
                    threat)
from semlab.cli import main as cli_main
from semlab.rng import stream
from semlab.smoothing import SmoothedModel, smoothed_vote_classes

GRID = tuple(np.round(np.linspace(0.0, 0.5, 11), 4))
REL, ABS = 1e-5, 1e-7


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared heavyweight state

@pytest.fixture(scope="module")
def world():
    t0 = time.monotonic()
    ds = data.gen_dataset(10, 160, jitter_sigma=0.3, seed=1, contrast=0.7)
    coll = ensemble.build_collection(ds, nets.default_zoo(10), (0.12, 0.25),
                                     (1, 2, 3), epochs=20, lr=0.05, seed=7)
    images, labels = evaluation.eval_subset(ds, 200, seed=3)
    return SimpleNamespace(
        dataset=ds, collection=coll, images=images, labels=labels,
        defense=threat.DefenseConfig(designated_arch="linear"),
        build_seconds=time.monotonic() - t0,
    )


@pytest.fixture(scope="module")
def figure3(world):
    t0 = time.monotonic()
    cfg = attacks.attack_config("bim", 0.5)
    curves = {}
    for sid in ("I", "H", "A", "F"):
        sc = threat.build_scenario(sid, world.collection, seed=11,
                                   config=world.defense)
        curves[sid] = evaluation.build_curve(
            sc, cfg, world.images, world.labels, GRID,
            n_trials=100, alpha=0.3, seed=5,
        )
    return SimpleNamespace(
        curves=curves,
        seconds=world.build_seconds + time.monotonic() - t0,
    )


def _separated(c1, c2, i):
    return abs(c1.asrs[i] - c2.asrs[i]) > c1.ses[i] + c2.ses[i]


# ---------------------------------------------------------------------------
# 1. analytic gradients vs central finite differences, every layer kind

def _grad_pairs(layer, params, x, upstream):
    """(analytic, finite-difference) pairs for d(sum(upstream*out))/d(...)"""
    _, cache = kernel.layer_apply(layer, params, x)
    dx, grads = kernel.layer_backprop(layer, params, cache, upstream)

    def at_x(xv):
        o, _ = kernel.layer_apply(layer, params, xv)
        return float(np.sum(upstream * o))

    pairs = [(dx, kernel.finite_diff_grad(at_x, x.copy()))]
    for pi, g in enumerate(grads):
        def at_p(pv, pi=pi):
            ps = list(params)
            ps[pi] = pv
            o, _ = kernel.layer_apply(layer, ps, x)
            return float(np.sum(upstream * o))
        pairs.append((g, kernel.finite_diff_grad(at_p, params[pi].copy())))
    return pairs


def _random_layer_case(kind, rng):
    if kind == "dense":
        i, o = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        return (kernel.dense(i, o),
                [rng.normal(size=(o, i)), rng.normal(size=o)],
                rng.normal(size=i), rng.normal(size=o))
    if kind == "conv2d":
        ic, oc = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(2, 4))
        h, w = (k + int(rng.integers(0, 4)) for _ in range(2))
        return (kernel.conv2d(ic, oc, k),
                [rng.normal(size=(oc, ic, k, k)), rng.normal(size=oc)],
                rng.normal(size=(ic, h, w)),
                rng.normal(size=(oc, h - k + 1, w - k + 1)))
    if kind == "relu":
        dims = tuple(int(d)
                     for d in rng.integers(1, 5, size=int(rng.integers(1, 4))))
        x = rng.normal(size=dims)
        x[np.abs(x) < 1e-3] += 0.02  # keep clear of the kink
        return kernel.relu(), [], x, rng.normal(size=dims)
    if kind == "avgpool":
        p, c = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        h, w = p * int(rng.integers(1, 3)), p * int(rng.integers(1, 3))
        return (kernel.avgpool(p), [], rng.normal(size=(c, h, w)),
                rng.normal(size=(c, h // p, w // p)))
    # flatten
    c, h, w = (int(d) for d in rng.integers(1, 4, size=3))
    return (kernel.flatten(), [], rng.normal(size=(c, h, w)),
            rng.normal(size=c * h * w))


def test_criterion_1_gradient_correctness():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    worst, count = 0.0, 0
    for kind in kernel.LAYER_KINDS:
        for _ in range(50):
            if kind == "softmax_xent":
                d = int(rng.integers(2, 10))
                x = rng.normal(size=d)
                target = rng.uniform(0.1, 1.0, size=d)
                layer = kernel.softmax_xent()
                _, cache = kernel.layer_apply(layer, [], x)
                dx, _ = kernel.layer_backprop(layer, [], cache, target)

                def ce(xv):
                    o, _ = kernel.layer_apply(layer, [], xv)
                    return float(-(target * np.log(o)).sum())

                pairs = [(dx, kernel.finite_diff_grad(ce, x.copy()))]
            else:
                layer, params, x, upstream = _random_layer_case(kind, rng)
                pairs = _grad_pairs(layer, params, x, upstream)
            for analytic, fd in pairs:
                count += 1
                worst = max(worst, float(np.max(
                    np.abs(analytic - fd) / np.maximum(ABS, REL * np.abs(fd))
                )))
    elapsed = time.monotonic() - t0
    _verdict(1, worst <= 1.0 and elapsed < 60,
             f"{count} gradient tensors across {len(kernel.LAYER_KINDS)} "
             f"layer kinds, worst deviation {worst:.3g}x the "
             f"1e-5-rel/1e-7-abs allowance, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. smoothed linear model matches the Gaussian closed form

def test_criterion_2_smoothed_linear_closed_form():
    t0 = time.monotonic()
    ds2 = data.gen_dataset(2, 40, jitter_sigma=0.3, seed=2, contrast=0.7)
    model = nets.train(nets.build_model(nets.default_zoo(2)[0], seed=0),
                       ds2, 0.0, epochs=10, lr=0.05, rng=stream(4, "train"))
    W, _ = model.params
    xs, _ = ds2.test()
    worst = 0.0
    for sigma in (0.25, 0.75, 1.5):
        for x in xs[:3]:
            logits = nets.predict_logits(model, x)
            top = int(np.argmax(logits))
            margin = float(logits[top] - logits[1 - top])
            w_norm = float(np.linalg.norm((W[top] - W[1 - top]).ravel()))
            phi = scipy_norm.cdf(margin / (sigma * w_norm))
            cls = smoothed_vote_classes(SmoothedModel(model, sigma), x,
                                        10 ** 4,
                                        stream(9, "mc", int(sigma * 100)))
            worst = max(worst, abs(float(np.mean(cls == top)) - phi))
    elapsed = time.monotonic() - t0
    _verdict(2, worst <= 0.02 and elapsed < 60,
             f"hard-vote fraction vs Phi(margin/(sigma*||w||)) at N=10^4, "
             f"sigma in (0.25, 0.75, 1.5): worst gap {worst:.4f} "
             f"(allowed 0.02), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. stochastic ensemble equals its weighted counterpart in expectation

def test_criterion_3_expectation_equivalence():
    t0 = time.monotonic()
    ds = data.gen_dataset(10, 20, jitter_sigma=0.3, seed=2, contrast=0.7)
    zoo = nets.default_zoo(10)
    toy = ensemble.build_collection(ds, [zoo[0], zoo[1], zoo[3]],
                                    (0.12, 0.25), (1, 2, 3), epochs=5,
                                    lr=0.05, seed=7, heterogeneous=False)
    rng = stream(13, "inputs")
    worst = 0.0
    for i in range(10):
        x = rng.uniform(0.0, 1.0, size=(1, 8, 8))
        gap = ensemble.sem_expectation_oracle(toy, x, 10 ** 4, 50,
                                              stream(13, "mc", i))
        worst = max(worst, gap.gap_se_units)
    elapsed = time.monotonic() - t0
    _verdict(3, worst <= 3.0 and elapsed < 300,
             f"3-arch x 2-sigma collection, draws=10^4, m=50, 10 inputs: "
             f"worst gap {worst:.2f} combined SE (allowed 3), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. attack identities, ball/box discipline, query budget

def test_criterion_4_attack_sanity():
    rng = np.random.default_rng(5)
    shape = (1, 4, 4)
    checked = 0
    for trial in range(6):
        W = rng.normal(size=(3, 16))
        b = rng.normal(size=3)
        model = nets.linear_model(W, b, shape)
        oracle = attacks.GradientOracle(
            "white",
            grad=lambda q, lab, mode: nets.input_grad(model, q, lab, mode),
        )
        x0 = rng.uniform(0.05, 0.95, size=shape)
        y = int(np.argmax(nets.predict_logits(model, x0)))
        for eps in (0.05, 0.3):
            fgsm = attacks.run_attack(attacks.attack_config("fgsm", eps),
                                      oracle, x0, y, stream(1, trial))
            bim1 = attacks.run_attack(
                attacks.attack_config("bim", eps, iterations=1,
                                      step_size=eps),
                oracle, x0, y, stream(1, trial))
            assert np.array_equal(fgsm, bim1), "FGSM != single-step BIM"
            mim0 = attacks.run_attack(
                attacks.attack_config("mim", eps, momentum_mu=0.0),
                oracle, x0, y, stream(2, trial))
            bim = attacks.run_attack(attacks.attack_config("bim", eps),
                                     oracle, x0, y, stream(2, trial))
            assert np.array_equal(mim0, bim), "zero-momentum MIM != BIM"
            for method in ("fgsm", "bim", "mim", "pgd"):
                for norm in ("linf", "l2"):
                    adv = attacks.run_attack(
                        attacks.attack_config(method, eps, norm),
                        oracle, x0, y, stream(3, trial, method, norm))
                    delta = (adv - x0).ravel()
                    size = (np.max(np.abs(delta)) if norm == "linf"
                            else np.linalg.norm(delta))
                    assert size <= eps + 1e-9, (method, norm, size)
                    assert adv.min() >= -1e-9 and adv.max() <= 1 + 1e-9
                    checked += 1

    max_used = 0
    for method in ("nes", "spsa"):
        calls = []
        W = rng.normal(size=(3, 16))
        model = nets.linear_model(W, rng.normal(size=3), shape)

        def scores(q):
            calls.append(1)
            from semlab.smoothing import softmax
            return softmax(nets.predict_logits(model, q)[None])[0]

        score_oracle = attacks.GradientOracle("score", scores=scores)
        cfg = attacks.attack_config(method, 0.3, iterations=200,
                                    query_budget=5000, est_samples=50)
        x0 = rng.uniform(0.05, 0.95, size=shape)
        attacks.run_attack(cfg, score_oracle, x0, 0, stream(4, method))
        max_used = max(max_used, len(calls))
    _verdict(4, max_used <= 5000,
             f"FGSM==BIM(1) and MIM(mu=0)==BIM bit-exact, {checked} "
             f"ball/box checks within 1e-9, black-box query peak "
             f"{max_used} <= 5000")


# ---------------------------------------------------------------------------
# 5. black-box gradient estimators align with analytic gradients

def test_criterion_5_estimator_soundness():
    d = 12
    rng = np.random.default_rng(3)
    a = rng.normal(size=d)
    x0 = rng.normal(size=d) * 0.3
    M = rng.normal(size=(d, d))
    A = M @ M.T / d
    qgrad = A @ x0

    def lin_scores(x):
        return np.array([np.exp(-float(a @ x))])

    def quad_scores(x):
        return np.array([np.exp(-0.5 * float(x @ A @ x))])

    R = 1000
    cos_floor, spsa_units = 1.0, 0.0
    for name, fn in (("nes", attacks.nes_gradient),
                     ("spsa", attacks.spsa_gradient)):
        for tag, scores, g in (("lin", lin_scores, a),
                               ("quad", quad_scores, qgrad)):
            ests = np.array([
                fn(scores, x0, 0, "untargeted-loss", 2, 0.01,
                   stream(7, name, tag, r))
                for r in range(R)
            ])
            m = ests.mean(axis=0)
            cos_floor = min(cos_floor, float(
                m @ g / (np.linalg.norm(m) * np.linalg.norm(g))))
            if name == "spsa":
                se = ests.std(axis=0, ddof=1) / np.sqrt(R)
                spsa_units = max(spsa_units, float(
                    np.max(np.abs(m - g) / np.maximum(se, 1e-300))))
    _verdict(5, cos_floor > 0.9 and spsa_units <= 3.0,
             f"mean-of-1000 estimates on linear/quadratic losses: "
             f"worst cosine {cos_floor:.4f} (> 0.9 required), SPSA bias "
             f"{spsa_units:.2f} SE (<= 3)")


# ---------------------------------------------------------------------------
# 6. curve protocol: monotone, dual-estimator, boundary recovery

def test_criterion_6_curve_protocol(world, figure3):
    t0 = time.monotonic()
    for sid, curve in figure3.curves.items():
        assert np.all(np.diff(curve.asrs) >= 0.0), f"{sid} not monotone"

    sc = threat.build_scenario("A", world.collection, seed=11,
                               config=world.defense)
    cfg = attacks.attack_config("bim", 0.5)
    imgs, labs = world.images[:50], world.labels[:50]
    fold = evaluation.build_curve(sc, cfg, imgs, labs, (0.1, 0.2, 0.3),
                                  n_trials=100, alpha=0.3, seed=5)
    worst_units = 0.0
    for pt in fold.points:
        asr, se = evaluation.asr_at_epsilon(
            sc, evaluation.with_epsilon(cfg, pt.epsilon), imgs, labs,
            100, 0.3, 5)
        gap = abs(asr - pt.asr)
        combined = float(np.hypot(pt.se, se))
        if combined == 0.0:
            assert gap == 0.0, f"saturated point disagrees at {pt.epsilon}"
        else:
            worst_units = max(worst_units, gap / combined)

    w = np.array([2.0, -1.0])
    model = nets.linear_model(np.vstack([np.zeros(2), w]),
                              np.array([0.0, -0.3]), (2,),
                              arch_id="boundary",
                              meta={"clean_accuracy": 1.0})
    coll = ensemble.ModelCollection(
        (ensemble.CollectionEntry("boundary:plain", "boundary", 0.0,
                                  model),),
        (1,), {"boundary": model},
    )
    lin = threat.build_scenario("I", coll, seed=11)
    x = np.array([0.5, 0.5])
    star = float(w @ x - 0.3) / np.abs(w).sum()  # linf flip point
    found = evaluation.min_distortion_search(
        lin, attacks.attack_config("fgsm", 0.5), x, 1, sample_tag=0,
        seed=5, n_trials=1, alpha=0.3, coarse_steps=10, binary_steps=20,
        eps_max=0.5)
    bracket = 2 * 0.5 / 10 / 2 ** 20
    boundary_err = abs(found - star)
    elapsed = time.monotonic() - t0
    _verdict(6, worst_units <= 3.0 and boundary_err <= bracket + 1e-12,
             f"curves monotone; fold-vs-direct within {worst_units:.2f} "
             f"combined SE (<= 3) on 50 samples; linear boundary off by "
             f"{boundary_err:.2e} (bracket {bracket:.2e}), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. Figure-3-analogue orderings at 200 samples

def test_criterion_7_figure3_orderings(figure3):
    cv = figure3.curves
    sep_a = [i for i in range(len(GRID)) if _separated(cv["H"], cv["I"], i)]
    right_a = [i for i in sep_a if cv["H"].asrs[i] >= cv["I"].asrs[i]]
    ok_a = (len(right_a) >= 0.6 * len(sep_a)) if sep_a else True

    third = int(np.ceil(len(GRID) / 3))
    sep_b = [i for i in range(third) if _separated(cv["A"], cv["F"], i)]
    right_b = [i for i in sep_b if cv["A"].asrs[i] <= cv["F"].asrs[i]]
    ok_b = (len(right_b) >= 0.6 * len(sep_b)) if sep_b else True

    detail_a = (f"H>=I at {len(right_a)}/{len(sep_a)} separated points"
                if sep_a else "H vs I: no separated points (vacuous)")
    detail_b = (f"A<=F at {len(right_b)}/{len(sep_b)} separated points"
                if sep_b else "A vs F: error bars overlap everywhere in "
                              "the small-eps third (vacuous)")
    _verdict(7, ok_a and ok_b and figure3.seconds < 1800,
             f"(a) {detail_a}; (b) {detail_b}; "
             f"200 samples, {figure3.seconds:.0f}s")


# ---------------------------------------------------------------------------
# 8. attribute ablations under attacker A

def test_criterion_8_ablations(world):
    t0 = time.monotonic()
    coll = ensemble.build_collection(
        world.dataset, nets.default_zoo(10, extended=True), (0.12, 0.25),
        (1, 2, 3), epochs=20, lr=0.05, seed=7)
    base = evaluation.AblationBase(
        dataset=world.dataset, collection=coll,
        attack=attacks.attack_config("bim", 0.5), grid=GRID,
        n_trials=100, alpha=0.3, sample_count=48, seed=5,
        epochs=20, lr=0.05, defense=world.defense,
    )
    details, ok = [], True
    for mode in evaluation.ABLATION_MODES:
        baseline, variant = evaluation.ablation_run(mode, base)
        holds = int(np.sum(variant.asrs >= baseline.asrs))
        ok = ok and holds > len(GRID) // 2
        details.append(f"{mode}: variant>=baseline at {holds}/{len(GRID)}")
    elapsed = time.monotonic() - t0
    _verdict(8, ok and elapsed < 1800,
             "; ".join(details) + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. CLI reruns emit bit-identical CSVs

def test_criterion_9_cli_reproducibility(tmp_path):
    outdir = str(tmp_path / "runs")
    cfg = {
        "dataset": {"per_class": 8},
        "sigma_grid": [0.25],
        "epochs": 2,
        "n_trials": 9,
        "sample_count": 4,
        "coarse_steps": 4,
        "binary_steps": 4,
        "epsilon_grid": [0.0, 0.25, 0.5],
        "output_dir": outdir,
    }
    cfg_path = str(tmp_path / "run.json")
    with open(cfg_path, "w") as fh:
        json.dump(cfg, fh)
    assert cli_main(["train-collection", "--config", cfg_path],
                    out=io.StringIO()) == 0

    def run_and_read(argv, paths):
        assert cli_main(argv, out=io.StringIO()) == 0
        blobs = []
        for p in paths:
            with open(os.path.join(outdir, p), "rb") as fh:
                blobs.append(fh.read())
        return blobs

    jobs = [
        (["attack", "--config", cfg_path, "--scenario", "A", "--attack",
          "bim", "--epsilon", "0.25"],
         ["attack-A-bim-untargeted-eps0.25.csv"]),
        (["curve", "--config", cfg_path, "--scenario", "I", "--scenario",
          "A", "--attack", "bim"],
         ["curves.csv"]),
    ]
    identical = True
    for argv, paths in jobs:
        first = run_and_read(argv, paths)
        second = run_and_read(argv, paths)
        identical = identical and first == second
    _verdict(9, identical,
             "attack and curve reruns with the same config and seeds "
             "emit byte-identical CSVs")
