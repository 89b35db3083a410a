"""Runtime-scaling measurements for the fast paths.

Each benchmark times one apply at a fixed problem size, sweeping the
sequence length over powers of two and fitting a log-log slope: the
recurrent scans should land near 1 (linear), the Toeplitz FFT path near
1 (an L log L curve over this range), and the dense matvec near 2.

The dense case at the top of the sweep would need tens of GB as a single
matrix, so it streams the matvec over a fixed random row block reused
cyclically — flop count and per-row traffic match a true dense matvec
while memory stays bounded; only the timing is taken from it.

Repetitions run sequentially; the per-(family, L) statistics are the
median and 90th percentile in nanoseconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Rng
from .framework import MixerConfig
from . import families, ssm

BENCH_FAMILIES = ("semiseparable", "quasiseparable", "toeplitz", "dense")

_HEADS = 2
_STATE = 4
_HEAD_DIM = 4


@dataclass
class BenchRow:
    family: str
    seq_len: int
    median_ns: int
    p90_ns: int
    slope: float = float("nan")


def _setup(family: str, seq_len: int, seed: int):
    """Returns a zero-argument callable that performs one apply."""
    rng = Rng(seed)
    d = _HEADS * _HEAD_DIM
    if family == "semiseparable":
        xv = rng.normal((1, seq_len, d))
        abar = rng.uniform((1, seq_len, _HEADS), 0.5, 0.99)
        bbar = rng.normal((1, seq_len, _HEADS, _STATE))
        c = rng.normal((1, seq_len, _HEADS, _STATE))
        return lambda: ssm.ss_scan(xv, abar, bbar, c)
    if family == "quasiseparable":
        params = ssm.init_quasi_params(rng, in_channels=8, n_heads=_HEADS,
                                       n_state=_STATE)
        x = rng.normal((1, seq_len, 8))
        xv = rng.normal((1, seq_len, d))
        return lambda: ssm.qs_apply(params, x, xv)
    if family == "toeplitz":
        cfg = MixerConfig(seq_len=seq_len, in_channels=8,
                          inner_dim=_HEADS * _HEAD_DIM, n_heads=_HEADS,
                          head_dim=_HEAD_DIM)
        spec = families.build_mixer("toeplitz", "di", cfg, rng)
        v = rng.normal((1, seq_len, _HEADS * _HEAD_DIM))
        return lambda: families.apply_family(spec, v)
    if family == "dense":
        # ~2 MB row blocks keep the streamed operand cache-resident at every
        # sweep size, so the measurement tracks the O(L^2) flops rather than
        # a bandwidth regime change at the top of the sweep
        block_rows = max(1, min(seq_len, (1 << 18) // seq_len))
        block = rng.normal((block_rows, seq_len))
        v = rng.normal((seq_len,))
        out = np.empty(seq_len)

        def run():
            for r0 in range(0, seq_len, block_rows):
                r1 = min(r0 + block_rows, seq_len)
                out[r0:r1] = block[:r1 - r0] @ v
            return out

        return run
    raise ValueError(f"unknown bench family {family!r}")


def run_bench(family_names=BENCH_FAMILIES, l_min: int = 1 << 10,
              l_max: int = 1 << 16, reps: int = 20, seed: int = 0) -> list[BenchRow]:
    for val, name in ((l_min, "l_min"), (l_max, "l_max")):
        if val < 2 or val & (val - 1):
            raise ValueError(f"{name} must be a power of two, got {val}")
    if l_max < l_min:
        raise ValueError("l_max must be >= l_min")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    sweep = []
    length = l_min
    while length <= l_max:
        sweep.append(length)
        length *= 2
    rows: list[BenchRow] = []
    for family in family_names:
        fam_rows = []
        for seq_len in sweep:
            run = _setup(family, seq_len, seed)
            run()  # warm-up, outside the measurements
            samples = np.empty(reps)
            for r in range(reps):
                t0 = time.perf_counter_ns()
                run()
                samples[r] = time.perf_counter_ns() - t0
            fam_rows.append(BenchRow(
                family=family, seq_len=seq_len,
                median_ns=int(np.median(samples)),
                p90_ns=int(np.percentile(samples, 90))))
        slope = fitted_slope(fam_rows)
        for row in fam_rows:
            row.slope = slope
        rows.extend(fam_rows)
    return rows


def fitted_slope(rows: list[BenchRow]) -> float:
    """Least-squares slope of log2(median_ns) against log2(L)."""
    xs = np.log2([r.seq_len for r in rows])
    ys = np.log2([max(r.median_ns, 1) for r in rows])
    if len(rows) < 2:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


def rows_to_csv(rows: list[BenchRow]) -> str:
    lines = ["family,L,median_ns,p90_ns,slope"]
    for r in rows:
        lines.append(f"{r.family},{r.seq_len},{r.median_ns},{r.p90_ns},{r.slope:.4f}")
    return "\n".join(lines) + "\n"
