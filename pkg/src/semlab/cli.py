"""Command-line dispatch for the lab workflow.

Subcommands:
  train-collection  train the zoo across the sigma grid, write checkpoints
                    and the per-(arch, sigma) ACA table
  aca-table         print (and optionally re-write) the ACA table of a
                    saved collection
  attack            one scenario x method x epsilon run: print ASR, write
                    a one-point CSV
  curve             scenario x attack x target-mode ASR curves: CSV + SVGs
  ablation          attribute ablation pairs (quantity-high, homogeneous)
  report            render SVG overlays from existing curve CSVs

Every command echoes the resolved configuration and seed set before doing
work, validates its inputs before writing anything, and never modifies a
checkpoint it read.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import checkpoint, emit, ensemble, nets, threat
from .attacks import METHODS
from .config import AttackBlock, RunConfig, load_config, save_config
from .evaluation import (AblationBase, ABLATION_MODES, CurvePoint, Curve,
                         ablation_run, asr_at_epsilon, build_curve,
                         eval_subset)
from .threat import SCENARIO_IDS, build_scenario

ACA_COLUMNS = ("arch", "sigma", "aca", "unsmoothable")


def _seed_note(cfg: RunConfig) -> str:
    return "seeds: " + " ".join(
        f"{k}={cfg.seeds[k]}" for k in sorted(cfg.seeds)
    )


def _echo_config(cfg: RunConfig, out) -> None:
    print("resolved config:", file=out)
    print(cfg.to_json(), end="", file=out)
    print(_seed_note(cfg), file=out)


def _collection_dir(cfg: RunConfig, override) -> str:
    return override or os.path.join(cfg.output_dir, "collection")


def _load_collection(path: str):
    try:
        return checkpoint.load_collection(path)
    except FileNotFoundError as exc:
        raise SystemExit(
            f"error: missing checkpoint under {path!r}: {exc}"
        )
    except checkpoint.CheckpointError as exc:
        raise SystemExit(f"error: unreadable checkpoint: {exc}")


def _aca_table_text(collection) -> str:
    lines = ["%-16s %8s %8s %s" % ("arch", "sigma", "aca", "unsmoothable")]
    for e in collection.entries:
        lines.append("%-16s %8.4g %8.3f %s"
                     % (e.arch_id, e.sigma, e.aca, e.unsmoothable))
    return "\n".join(lines)


def _aca_csv(collection) -> str:
    rows = [",".join(ACA_COLUMNS)]
    for e in collection.entries:
        rows.append("%s,%s,%s,%s" % (
            e.arch_id, repr(float(e.sigma)), repr(float(e.aca)),
            "true" if e.unsmoothable else "false",
        ))
    return "\n".join(rows) + "\n"


def _attack_block(cfg: RunConfig, method: str, targeted: bool) -> AttackBlock:
    for block in cfg.attacks:
        if block.method == method and block.targeted == targeted:
            return block
    return AttackBlock(method, targeted=targeted)


def _select_scenarios(cfg: RunConfig, requested) -> tuple[str, ...]:
    if requested:
        return tuple(requested)
    return cfg.scenarios


def _modes(args) -> tuple[bool, ...]:
    if args.targeted and args.untargeted:
        return (False, True)
    if args.targeted:
        return (True,)
    return (False,)


def _family_ok(scenario_id: str, method: str) -> bool:
    white = method in ("fgsm", "bim", "mim", "pgd")
    score_based = threat.SCENARIO_TABLE[scenario_id].attack_family == "black-score"
    return white != score_based


# ---------------------------------------------------------------------------
# subcommand bodies

def _cmd_train_collection(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    dataset = cfg.dataset.build(cfg.seeds["dataset"])
    collection = ensemble.build_collection(
        dataset, cfg.build_zoo(), cfg.sigma_grid, cfg.quantity_options,
        epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seeds["collection"],
        alpha=cfg.alpha,
    )
    directory = _collection_dir(cfg, args.collection)
    manifest = checkpoint.save_collection(collection, directory)
    checkpoint.atomic_write_text(os.path.join(directory, "aca.csv"),
                                 _aca_csv(collection))
    accs = {
        a: nets.accuracy(collection.plain_models[a], *dataset.test())
        for a in sorted(collection.plain_models)
    }
    print("plain test accuracy: "
          + " ".join(f"{a}={v:.3f}" for a, v in accs.items()), file=out)
    print(_aca_table_text(collection), file=out)
    print(f"wrote {manifest}", file=out)
    return 0


def _cmd_aca_table(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    collection = _load_collection(_collection_dir(cfg, args.collection))
    print(_aca_table_text(collection), file=out)
    if args.out:
        checkpoint.atomic_write_text(args.out, _aca_csv(collection))
        print(f"wrote {args.out}", file=out)
    return 0


def _cmd_attack(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    if not _family_ok(args.scenario, args.attack):
        raise SystemExit(
            f"error: scenario {args.scenario} and method {args.attack} "
            "mix white-box and score-based families"
        )
    collection = _load_collection(_collection_dir(cfg, args.collection))
    dataset = cfg.dataset.build(cfg.seeds["dataset"])
    images, labels = eval_subset(dataset, args.samples or cfg.sample_count,
                                 cfg.seeds["subset"])
    scenario = build_scenario(args.scenario, collection,
                              cfg.seeds["scenario"], cfg.defense())
    block = _attack_block(cfg, args.attack, args.targeted)
    attack = block.build(args.epsilon, args.target_class)
    asr, se = asr_at_epsilon(scenario, attack, images, labels,
                             cfg.n_trials, cfg.alpha, cfg.seeds["curve"],
                             workers=cfg.workers)
    n = len(images)
    print(f"scenario={args.scenario} method={args.attack} "
          f"epsilon={args.epsilon} targeted={args.targeted} "
          f"asr={asr:.4f} se={se:.4f} n={n} N={cfg.n_trials} "
          f"alpha={cfg.alpha}", file=out)
    curve = Curve(
        (CurvePoint(float(args.epsilon), asr, n, se),),
        {"scenario": args.scenario, "attack": args.attack,
         "targeted": args.targeted, "norm": attack.norm, "N": cfg.n_trials,
         "alpha": cfg.alpha, "seed": cfg.seeds["curve"]},
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    mode = "targeted" if args.targeted else "untargeted"
    path = os.path.join(
        cfg.output_dir,
        f"attack-{args.scenario}-{args.attack}-{mode}-eps{args.epsilon}.csv",
    )
    emit.write_curves_csv([curve], path)
    print(f"wrote {path}", file=out)
    return 0


def _cmd_curve(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    scenarios = _select_scenarios(cfg, args.scenario)
    methods = tuple(args.attack) if args.attack else ("bim",)
    modes = _modes(args)
    jobs = [
        (sid, method, targeted)
        for method in methods for targeted in modes for sid in scenarios
        if _family_ok(sid, method)
    ]
    if not jobs:
        raise SystemExit(
            "error: no runnable scenario/method combinations "
            "(white-box methods need scenarios A-D/F-I, score methods E/J-M)"
        )
    collection = _load_collection(_collection_dir(cfg, args.collection))
    dataset = cfg.dataset.build(cfg.seeds["dataset"])
    images, labels = eval_subset(dataset, args.samples or cfg.sample_count,
                                 cfg.seeds["subset"])
    curves = []
    for sid, method, targeted in jobs:
        scenario = build_scenario(sid, collection, cfg.seeds["scenario"],
                                  cfg.defense())
        block = _attack_block(cfg, method, targeted)
        template = block.build(cfg.eps_max)
        curve = build_curve(
            scenario, template, images, labels, cfg.epsilon_grid,
            n_trials=cfg.n_trials, alpha=cfg.alpha, seed=cfg.seeds["curve"],
            coarse_steps=cfg.coarse_steps, binary_steps=cfg.binary_steps,
            eps_max=cfg.eps_max, workers=cfg.workers,
        )
        print(f"{sid}/{method}/{'targeted' if targeted else 'untargeted'}: "
              + " ".join(f"{p.asr:.3f}" for p in curve.points), file=out)
        curves.append(curve)
    written = emit.emit_results(curves, cfg.output_dir, args.basename,
                                _seed_note(cfg))
    for path in written:
        print(f"wrote {path}", file=out)
    return 0


def _cmd_ablation(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    modes = ABLATION_MODES if args.mode == "both" else (args.mode,)
    collection = _load_collection(_collection_dir(cfg, args.collection))
    dataset = cfg.dataset.build(cfg.seeds["dataset"])
    block = _attack_block(cfg, args.attack, targeted=False)
    base = AblationBase(
        dataset=dataset, collection=collection,
        attack=block.build(cfg.eps_max), grid=cfg.epsilon_grid,
        n_trials=cfg.n_trials, alpha=cfg.alpha,
        sample_count=args.samples or cfg.sample_count,
        seed=cfg.seeds["curve"], epochs=cfg.epochs, lr=cfg.lr,
        coarse_steps=cfg.coarse_steps, binary_steps=cfg.binary_steps,
        eps_max=cfg.eps_max, defense=cfg.defense(), workers=cfg.workers,
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    for mode in modes:
        baseline, variant = ablation_run(mode, base)
        for tag, curve in (("baseline", baseline), ("variant", variant)):
            print(f"{mode}/{tag}: "
                  + " ".join(f"{p.asr:.3f}" for p in curve.points), file=out)
            path = os.path.join(cfg.output_dir, f"ablation-{mode}-{tag}.csv")
            emit.write_curves_csv([curve], path)
            print(f"wrote {path}", file=out)
        svg = os.path.join(cfg.output_dir, f"ablation-{mode}.svg")
        checkpoint.atomic_write_text(
            svg, emit.render_svg([baseline, variant], f"ablation: {mode}",
                                 _seed_note(cfg)),
        )
        print(f"wrote {svg}", file=out)
    return 0


def _cmd_report(args, out) -> int:
    cfg = load_config(args.config)
    _echo_config(cfg, out)
    curves = []
    for path in args.csv:
        if not os.path.exists(path):
            raise SystemExit(f"error: no such CSV {path!r}")
        curves.extend(emit.read_curves_csv(path))
    if not curves:
        raise SystemExit("error: the given CSVs contain no curves")
    directory = args.out or cfg.output_dir
    written = emit.write_svg_overlays(curves, directory, args.basename,
                                      _seed_note(cfg))
    for path in written:
        print(f"wrote {path}", file=out)
    return 0


def _cmd_init_config(args, out) -> int:
    cfg = load_config(args.config)
    save_config(cfg, args.out)
    print(f"wrote {args.out}", file=out)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semlab",
        description="stochastic-ensemble smoothed-model defense lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="RunConfig JSON path")
        p.add_argument("--collection",
                       help="checkpoint directory (default <output>/collection)")

    p = sub.add_parser("train-collection",
                       help="train the zoo and write checkpoints + ACA table")
    common(p)
    p.set_defaults(func=_cmd_train_collection)

    p = sub.add_parser("aca-table",
                       help="per-(arch, sigma) approximated certified accuracy")
    common(p)
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=_cmd_aca_table)

    p = sub.add_parser("attack", help="single ASR measurement at one epsilon")
    common(p)
    p.add_argument("--scenario", required=True, choices=SCENARIO_IDS)
    p.add_argument("--attack", required=True, choices=METHODS)
    p.add_argument("--epsilon", required=True, type=float)
    p.add_argument("--targeted", action="store_true")
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("curve", help="ASR-vs-distortion curves to CSV + SVG")
    common(p)
    p.add_argument("--scenario", action="append", choices=SCENARIO_IDS,
                   help="repeatable; default: scenarios from the config")
    p.add_argument("--attack", action="append", choices=METHODS,
                   help="repeatable; default: bim")
    p.add_argument("--targeted", action="store_true")
    p.add_argument("--untargeted", action="store_true")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--basename", default="curves")
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("ablation", help="ensemble-attribute ablation pairs")
    common(p)
    p.add_argument("--mode", default="both",
                   choices=ABLATION_MODES + ("both",))
    p.add_argument("--attack", default="bim",
                   choices=("fgsm", "bim", "mim", "pgd"))
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("report", help="render SVG overlays from curve CSVs")
    common(p)
    p.add_argument("--csv", action="append", required=True,
                   help="curve CSV path; repeatable")
    p.add_argument("--out", help="output directory (default config output)")
    p.add_argument("--basename", default="report")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("init-config",
                       help="write the resolved config as a JSON file")
    p.add_argument("--config", help="start from this config instead of defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init_config)

    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out)
    except SystemExit:
        raise
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
