"""Randomized self-checks of the packed convolution against a direct oracle."""
from __future__ import annotations

import time

import numpy as np

from .costmodel import LayerCostSpec, exact_rotations, rotations_pruned, rotations_unpruned
from .heconv import count_rotations, mimo_conv
from .masks import PruneMask
from .packing import RotationLedger, pack, unpack
from .tensorcore import ConvLayerParams

CHANNELS = (2, 4, 8, 16)
PACKING = (2, 4, 8)
KERNELS = (3, 5)
SIZES = (4, 6, 8)


def shift_add_conv(x, w, b):
    """Same-padded stride-1 convolution by explicit shifted-slice accumulation."""
    c_out, c_in, f, _ = w.shape
    _, h, wd = x.shape
    r = f // 2
    xp = np.zeros((c_in, h + 2 * r, wd + 2 * r))
    xp[:, r:r + h, r:r + wd] = x
    out = np.zeros((c_out, h, wd)) + b[:, None, None]
    for u in range(f):
        for v in range(f):
            patch = xp[:, u:u + h, v:v + wd].reshape(c_in, -1)
            out += (w[:, :, u, v] @ patch).reshape(c_out, h, wd)
    return out


def random_config(rng):
    while True:
        c_in, c_out = int(rng.choice(CHANNELS)), int(rng.choice(CHANNELS))
        c_n = int(rng.choice(PACKING))
        if c_in % c_n == 0 and c_out % c_n == 0:
            return c_in, c_out, c_n, int(rng.choice(KERNELS)), int(rng.choice(SIZES))


def random_mask(rng, c_out, c_in, f, c_n, keep=0.6):
    m = PruneMask.full(c_out, c_in, f, c_n)
    m.positional = rng.random(m.positional.shape) < keep
    m.diagonal = rng.random(m.diagonal.shape) < keep
    return m


def uniform_mask(rng, c_out, c_in, f, c_n):
    """Same diagonal pattern in every block pair; j=0 kept."""
    m = PruneMask.full(c_out, c_in, f, c_n)
    m.positional = rng.random(m.positional.shape) < 0.5
    pattern = rng.random(c_n) < 0.5
    pattern[0] = True
    m.diagonal[:] = pattern
    return m


def check_oracle(n_configs: int = 200, seed: int = 0) -> float:
    """Max abs error of packed vs direct masked convolution over random configs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        c_in, c_out, c_n, f, h = random_config(rng)
        p = ConvLayerParams(rng.uniform(-1, 1, (c_out, c_in, f, f)), rng.uniform(-1, 1, c_out))
        x = rng.uniform(-1, 1, (c_in, h, h))
        m = random_mask(rng, c_out, c_in, f, c_n)
        got = unpack(mimo_conv(pack(x, c_n), p, m, RotationLedger()))
        want = shift_add_conv(x, p.weights * m.weight_mask(), p.bias)
        worst = max(worst, float(np.abs(got - want).max()))
    return worst


def check_count_laws(n_configs: int = 100, seed: int = 0) -> list[str]:
    """Failures of the unpruned, uniform-mask and per-block rotation count laws."""
    rng = np.random.default_rng(seed)
    failures = []
    for _ in range(n_configs):
        c_in, c_out, c_n, f, h = random_config(rng)
        p = ConvLayerParams(rng.uniform(-1, 1, (c_out, c_in, f, f)), np.zeros(c_out))
        x = rng.uniform(-1, 1, (c_in, h, h))
        spec = LayerCostSpec(c_in, c_out, f, c_n)
        for label, m in (("unpruned", None), ("uniform", uniform_mask(rng, c_out, c_in, f, c_n)),
                         ("random", random_mask(rng, c_out, c_in, f, c_n))):
            ledger = RotationLedger()
            mimo_conv(pack(x, c_n), p, m, ledger)
            total = count_rotations(ledger)[2]
            if m is None:
                expected = rotations_unpruned(spec)
            elif label == "uniform":
                expected = rotations_pruned(LayerCostSpec.from_mask(m))
            else:
                expected = sum(exact_rotations(m))
            if total != expected:
                failures.append(f"{label} {(c_in, c_out, c_n, f)}: ledger {total} != {expected}")
    return failures


def run_all(n_configs: int = 200, seed: int = 0) -> bool:
    t0 = time.perf_counter()
    err = check_oracle(n_configs, seed)
    ok_oracle = err <= 1e-9
    print(f"[{'PASS' if ok_oracle else 'FAIL'}] oracle equivalence over {n_configs} configs: "
          f"max |err| = {err:.3e} ({time.perf_counter() - t0:.1f}s)")
    failures = check_count_laws(max(n_configs // 2, 1), seed + 1)
    ok_counts = not failures
    print(f"[{'PASS' if ok_counts else 'FAIL'}] rotation count laws: {len(failures)} mismatches")
    for line in failures[:10]:
        print("   ", line)
    return ok_oracle and ok_counts
