"""Regularization sweeps, Pareto extraction, and frontier comparison."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

from .network import SyntheticTask, init_model, load_checkpoint, save_checkpoint
from .pruning import PruneSchedule, prune_with_finetune, write_trajectory_csv
from .training import RegFactors, TrainConfig, train

log = logging.getLogger(__name__)

SWEEP_MODES = ("group-lasso", "diagonal-only", "positional-only", "baseline-no-lasso", "channel-baseline")
_PRUNE_MODE = {
    "group-lasso": "both",
    "diagonal-only": "diagonal",
    "positional-only": "positional",
    "baseline-no-lasso": "both",
    "channel-baseline": "channel",
}

# lam x lam_d regularization grid (3 x 6) used for the CIFAR-100 scale runs
CIFAR100_SEARCH_GRID = {
    "lam": [0.0, 1e-4, 5e-4],
    "lam_p": [0.0],
    "lam_d": [0.0, 1e-4, 2e-4, 5e-4, 10e-4, 20e-4],
}


@dataclass
class ModelSpec:
    in_channels: int = 4
    widths: list = field(default_factory=lambda: [8, 8, 8])
    f: int = 3
    c_n: int = 4


@dataclass
class SweepSpec:
    lam: list = field(default_factory=lambda: [0.0])
    lam_p: list = field(default_factory=lambda: [0.0])
    lam_d: list = field(default_factory=lambda: [0.0])
    schedules: list = field(default_factory=lambda: [PruneSchedule()])
    seeds: list = field(default_factory=lambda: [0])
    mode: str = "group-lasso"
    task: SyntheticTask = field(default_factory=SyntheticTask)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in SWEEP_MODES:
            raise ValueError(f"mode must be one of {SWEEP_MODES}, got {self.mode!r}")
        for name in ("lam", "lam_p", "lam_d", "schedules", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep grid {name!r} is empty")

    def grid(self) -> list[tuple]:
        """Distinct ``(RegFactors, schedule_index, seed)`` points in a fixed order."""
        lasso_free = self.mode in ("baseline-no-lasso", "channel-baseline")
        points, seen = [], set()
        for lam, lp, ld, k, seed in itertools.product(
                self.lam, self.lam_p, self.lam_d, range(len(self.schedules)), self.seeds):
            reg = RegFactors(lam, 0.0 if lasso_free else lp, 0.0 if lasso_free else ld)
            key = (reg.lam, reg.lam_p, reg.lam_d, k, seed)
            if key not in seen:
                seen.add(key)
                points.append((reg, k, seed))
        return points

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        d["schedules"] = [s if isinstance(s, PruneSchedule) else PruneSchedule(**s)
                          for s in d.get("schedules", [{}])]
        d["task"] = SyntheticTask(**d.get("task", {}))
        d["model"] = ModelSpec(**d.get("model", {}))
        d["train"] = TrainConfig(**d.get("train", {}))
        return cls(**d)


@dataclass
class Trajectory:
    provenance: dict
    records: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


class ParetoPoint(NamedTuple):
    accuracy: float
    rotation_reduction_pct: float
    provenance: dict | None = None


class FrontierError(ValueError):
    pass


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def train_one(spec: SweepSpec, reg: RegFactors, seed: int, cache_dir: Path | None = None,
              memo: dict | None = None):
    """Trained model for one grid point; reuses an identical earlier training."""
    task = SyntheticTask(**{**asdict(spec.task), "seed": seed})
    cfg = TrainConfig(**{**asdict(spec.train), "seed": seed})
    key = _digest({"task": asdict(task), "model": asdict(spec.model), "train": asdict(cfg),
                   "reg": asdict(reg)})
    data = task.generate()
    if memo is not None and key in memo:
        return memo[key].copy(), data, key
    path = None if cache_dir is None else cache_dir / f"{key}.json"
    if path is not None and path.exists():
        model, _ = load_checkpoint(path)
    else:
        m = spec.model
        model = init_model(m.in_channels, m.widths, task.num_classes, m.c_n, m.f, seed=seed)
        model, history = train(model, data, cfg, reg)
        if path is not None:
            save_checkpoint(path, model, task=asdict(task), train=asdict(cfg), reg=asdict(reg),
                            seed=seed, history=history)
    if memo is not None:
        memo[key] = model.copy()
    return model, data, key


def _run_point(spec: SweepSpec, reg: RegFactors, k: int, seed: int, ckpt_dir, memo) -> Trajectory:
    schedule = PruneSchedule(**{**asdict(spec.schedules[k]), "seed": seed})
    prov = {"mode": spec.mode, "reg": asdict(reg), "schedule": k, "seed": seed}
    prov["run_id"] = _digest(prov)
    traj = Trajectory(prov)
    try:
        model, data, _ = train_one(spec, reg, seed, ckpt_dir, memo)
        traj.records = prune_with_finetune(model, schedule, data, mode=_PRUNE_MODE[spec.mode])
    except Exception as exc:  # recorded, sweep continues
        traj.error = f"{type(exc).__name__}: {exc}"
        log.warning("run %s failed: %s", prov["run_id"], traj.error)
        log.debug(traceback.format_exc())
    return traj


def run_sweep(spec: SweepSpec, results_dir=None, memo: dict | None = None,
              workers: int = 1) -> list[Trajectory]:
    """Train, prune, and record every grid point.

    With ``results_dir`` each trajectory is committed as ``runs/<id>.csv`` and
    indexed in ``manifest.json``; trained checkpoints land in ``checkpoints/``.
    A failing grid point is recorded with its error and the sweep goes on.
    ``workers > 1`` runs grid points in separate processes; every point is
    seeded on its own, so the output does not depend on the worker count.
    """
    out_dir = None if results_dir is None else Path(results_dir)
    ckpt_dir = None
    if out_dir is not None:
        (out_dir / "runs").mkdir(parents=True, exist_ok=True)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        _atomic_write(out_dir / "sweep.json", json.dumps(spec.to_dict(), indent=2))
    memo = {} if memo is None else memo
    grid = spec.grid()

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_point, spec, reg, k, seed, ckpt_dir, None) for reg, k, seed in grid]
            trajectories = [f.result() for f in futures]
    else:
        trajectories = [_run_point(spec, reg, k, seed, ckpt_dir, memo) for reg, k, seed in grid]

    if out_dir is not None:
        for t in trajectories:
            if t.ok:
                write_trajectory_csv(out_dir / "runs" / f"{t.provenance['run_id']}.csv", t.records)
        manifest = [{**t.provenance, "status": "ok" if t.ok else "error", "error": t.error,
                     "file": f"runs/{t.provenance['run_id']}.csv" if t.ok else None}
                    for t in trajectories]
        _atomic_write(out_dir / "manifest.json", json.dumps(manifest, indent=2))
    return trajectories


def load_results(results_dir) -> list[Trajectory]:
    from .pruning import read_trajectory_csv

    root = Path(results_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    out = []
    for entry in manifest:
        prov = {k: entry[k] for k in ("mode", "reg", "schedule", "seed", "run_id")}
        if entry["status"] != "ok":
            out.append(Trajectory(prov, [], entry.get("error")))
            continue
        out.append(Trajectory(prov, read_trajectory_csv(root / entry["file"])))
    return out


def trajectory_points(trajectories, metric: str = "rotations_reduction_pct",
                      exclude_start_above: float | None = None) -> list[ParetoPoint]:
    """Flatten trajectories to points.

    ``exclude_start_above`` drops whole trajectories whose un-pruned accuracy
    exceeds the given value (post-hoc filter, off by default).
    """
    pts = []
    for t in trajectories:
        if not t.ok or not t.records:
            continue
        if exclude_start_above is not None and t.records[0]["accuracy"] > exclude_start_above:
            continue
        for r in t.records:
            prov = {"reg": t.provenance["reg"], "iteration": r["iteration"], "seed": t.provenance["seed"]}
            pts.append(ParetoPoint(float(r["accuracy"]), float(r[metric]), prov))
    return pts


def pareto_frontier(points) -> list[ParetoPoint]:
    """Non-dominated subset in (accuracy up, reduction up), sorted by reduction.

    Exact duplicates keep only their first occurrence.
    """
    pts = [p if isinstance(p, ParetoPoint) else ParetoPoint(*p) for p in points]
    if not pts:
        raise FrontierError("pareto_frontier needs at least one point")
    order = sorted(range(len(pts)),
                   key=lambda k: (-pts[k].rotation_reduction_pct, -pts[k].accuracy, k))
    kept, best = [], -math.inf
    for k in order:
        if pts[k].accuracy > best:
            kept.append(pts[k])
            best = pts[k].accuracy
    return kept[::-1]


def reduction_at_floor(frontier, floor: float) -> float:
    """Largest reduction on the piecewise-linear frontier with accuracy >= ``floor``.

    Returns 0.0 when no frontier point reaches the floor.
    """
    best = 0.0
    for k, p in enumerate(frontier):
        if p.accuracy < floor:
            break
        best = max(best, p.rotation_reduction_pct)
        if k + 1 < len(frontier) and frontier[k + 1].accuracy < floor:
            nxt = frontier[k + 1]
            t = (p.accuracy - floor) / (p.accuracy - nxt.accuracy)
            best = max(best, p.rotation_reduction_pct
                       + t * (nxt.rotation_reduction_pct - p.rotation_reduction_pct))
    return best


def compare_at_accuracy(frontier_a, frontier_b, accuracy_drop: float,
                        best_accuracy: float | None = None) -> float:
    """Ratio of reachable rotation reduction, A over B, at ``best - accuracy_drop``.

    ``best`` defaults to the highest accuracy on either frontier.
    """
    if not frontier_a or not frontier_b:
        raise FrontierError("both frontiers must be non-empty")
    top_a = max(p.accuracy for p in frontier_a)
    top_b = max(p.accuracy for p in frontier_b)
    best = max(top_a, top_b) if best_accuracy is None else best_accuracy
    floor = best - accuracy_drop
    if floor > top_a and floor > top_b:
        raise FrontierError(f"accuracy floor {floor:.3f} above both frontiers")
    ra = reduction_at_floor(sorted(frontier_a, key=lambda p: p.rotation_reduction_pct), floor)
    rb = reduction_at_floor(sorted(frontier_b, key=lambda p: p.rotation_reduction_pct), floor)
    if rb == 0.0:
        return 1.0 if ra == 0.0 else math.inf
    return ra / rb


def write_frontier(path, frontier):
    path = Path(path)
    if path.suffix == ".json":
        rows = [{"accuracy": p.accuracy, "rotation_reduction_pct": p.rotation_reduction_pct,
                 "provenance": p.provenance} for p in frontier]
        _atomic_write(path, json.dumps(rows, indent=2))
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["accuracy", "rotation_reduction_pct", "provenance"])
        for p in frontier:
            w.writerow([p.accuracy, p.rotation_reduction_pct, json.dumps(p.provenance, sort_keys=True)])


def read_frontier(path) -> list[ParetoPoint]:
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
        return [ParetoPoint(r["accuracy"], r["rotation_reduction_pct"], r.get("provenance")) for r in rows]
    with open(path, newline="") as fh:
        return [ParetoPoint(float(r["accuracy"]), float(r["rotation_reduction_pct"]),
                            json.loads(r["provenance"]) if r.get("provenance") else None)
                for r in csv.DictReader(fh)]
