"""Command line entry point: ``heprune {train,prune,sweep,pareto,compare,verify,cost}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import costmodel, harness
from .network import SyntheticTask, init_model, load_checkpoint, save_checkpoint
from .pruning import PruneSchedule, prune_with_finetune, write_trajectory_csv
from .training import RegFactors, TrainConfig, train


def _read_json(path):
    return json.loads(Path(path).read_text())


def cmd_cost(args):
    specs = [costmodel.LayerCostSpec(**d) for d in _read_json(args.spec)]
    cost = costmodel.network_cost(specs)
    rows = []
    for k, (s, (full, pruned)) in enumerate(zip(specs, cost.per_layer)):
        save_p, save_d = costmodel.dominance_gap(s, 1.0)
        rows.append({"layer": k, **s.to_dict(), "rotations_unpruned": full, "rotations_pruned": pruned,
                     "max_positional_saving": save_p, "max_diagonal_saving": save_d})
    header = f"{'layer':>5} {'c_in':>5} {'c_out':>5} {'f':>2} {'c_n':>4} {'alpha':>6} {'beta':>6} {'unpruned':>9} {'pruned':>10}"
    print(header)
    for r in rows:
        print(f"{r['layer']:>5} {r['c_in']:>5} {r['c_out']:>5} {r['f']:>2} {r['c_n']:>4} "
              f"{r['alpha']:>6.3f} {r['beta']:>6.3f} {r['rotations_unpruned']:>9} {r['rotations_pruned']:>10.2f}")
    print(f"{'total':>5} {'':>27} {cost.unpruned:>9} {cost.pruned:>10.2f}")
    print(json.dumps({"layers": rows, "total_unpruned": cost.unpruned, "total_pruned": cost.pruned}, indent=2))
    return 0


def cmd_train(args):
    cfg = _read_json(args.config)
    task = SyntheticTask(**cfg.get("task", {}))
    mspec = harness.ModelSpec(**cfg.get("model", {}))
    tcfg = TrainConfig(**cfg.get("train", {}))
    reg = RegFactors(**cfg.get("reg", {}))
    model = init_model(mspec.in_channels, mspec.widths, task.num_classes, mspec.c_n, mspec.f, seed=tcfg.seed)
    model, history = train(model, task.generate(), tcfg, reg)
    save_checkpoint(args.out, model, task=asdict(task), model_spec=asdict(mspec), train=asdict(tcfg),
                    reg=asdict(reg), seed=tcfg.seed, history=history)
    last = history[-1]
    print(f"epochs={len(history)} train_loss={last['train_loss']:.4f} eval_accuracy={last['eval_accuracy']:.2f}")
    return 0


def cmd_prune(args):
    model, meta = load_checkpoint(args.checkpoint)
    schedule = PruneSchedule(**(_read_json(args.schedule) if args.schedule else {}))
    task = SyntheticTask(**meta.get("task", {}))
    records = prune_with_finetune(model, schedule, task.generate(), mode=args.mode)
    write_trajectory_csv(args.out, records)
    if args.save_model:
        save_checkpoint(args.save_model, model, **meta)
    last = records[-1]
    print(f"iterations={len(records) - 1} rotations={last['rotations']} "
          f"reduction={last['rotations_reduction_pct']:.2f}% accuracy={last['accuracy']:.2f}")
    return 0


def cmd_sweep(args):
    spec = harness.SweepSpec.from_dict(_read_json(args.spec))
    trajs = harness.run_sweep(spec, args.out, workers=args.workers)
    failed = sum(not t.ok for t in trajs)
    print(f"runs={len(trajs)} failed={failed} results={args.out}")
    return 1 if failed == len(trajs) else 0


def cmd_pareto(args):
    trajs = harness.load_results(args.results)
    metric = "param_reduction_pct" if args.metric == "params" else "rotations_reduction_pct"
    points = harness.trajectory_points(trajs, metric, args.exclude_start_above)
    frontier = harness.pareto_frontier(points)
    harness.write_frontier(args.out, frontier)
    for p in frontier:
        print(f"{p.accuracy:8.3f} {p.rotation_reduction_pct:8.3f}")
    return 0


def cmd_compare(args):
    a = harness.read_frontier(args.a)
    b = harness.read_frontier(args.b)
    ratio = harness.compare_at_accuracy(a, b, args.drop)
    print(json.dumps({"ratio": ratio, "accuracy_drop": args.drop}))
    return 0


def cmd_verify(args):
    from .verify import run_all

    ok = run_all(n_configs=args.configs, seed=args.seed)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heprune", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="closed-form rotation counts for a network spec")
    p.add_argument("spec", help="JSON list of {c_in, c_out, f, c_n, alpha, beta}")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("train", help="train the toy CNN from a JSON config")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True, help="checkpoint path (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="prune-with-finetune a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("-s", "--schedule", help="JSON PruneSchedule")
    p.add_argument("-m", "--mode", default="both", choices=["both", "positional", "diagonal", "channel"])
    p.add_argument("-o", "--out", required=True, help="trajectory CSV")
    p.add_argument("--save-model")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sweep", help="run a regularization sweep")
    p.add_argument("spec")
    p.add_argument("-o", "--out", required=True, help="results directory")
    p.add_argument("-j", "--workers", type=int, default=1, help="grid points run in parallel")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="extract the Pareto frontier of a results directory")
    p.add_argument("results")
    p.add_argument("-o", "--out", required=True, help=".csv or .json")
    p.add_argument("--metric", choices=["rotations", "params"], default="rotations")
    p.add_argument("--exclude-start-above", type=float, default=None,
                   help="drop trajectories whose un-pruned accuracy exceeds this")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("compare", help="reduction ratio of two frontiers at an accuracy floor")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--drop", type=float, default=3.0, help="accuracy points below the best")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="oracle-equivalence and rotation count-law checks")
    p.add_argument("--configs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
