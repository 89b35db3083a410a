"""Command-line harness.

    mixerkit verify       run verification suites, emit a JSON report
    mixerkit bench        runtime-scaling sweep, emit CSV (+ figure)
    mixerkit materialize  dump per-head mixer matrices as CSV (+ heatmap)
    mixerkit train-toy    masked-reconstruction comparison (+ loss curves)

Exit codes: 0 all checks passed, 1 a check failed, 2 usage error. All
randomness flows from --seed; there is no wall-clock entropy. The
MIXERKIT_THREADS environment variable caps how many verification suites
run concurrently (default 1); results are seed-derived, so concurrency
never changes them.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import families, suites
from .core import Rng
from .framework import MixerConfig
from .report import VerificationReport
from .toytask import ToyConfig, run_toy_task

VERIFY_CHECKS = ("oracle", "rank", "sam", "prefix", "extendability",
                 "corollaries", "gradcheck", "all")


def _positive_power_of_two(text: str) -> int:
    val = int(text)
    if val < 2 or val & (val - 1):
        raise argparse.ArgumentTypeError(f"{text} is not a power of two >= 2")
    return val


def _mask_rate(text: str) -> float:
    val = float(text)
    if not (0.0 < val < 1.0):
        raise argparse.ArgumentTypeError(f"mask rate must lie in (0, 1), got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixerkit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run verification suites")
    p_verify.add_argument("--family", choices=families.FAMILIES, default=None)
    p_verify.add_argument("--mode", choices=("di", "dd", "dft"), default=None)
    p_verify.add_argument("--check", action="append", choices=VERIFY_CHECKS,
                          default=None, help="repeatable; default: all")
    p_verify.add_argument("--L", type=int, default=16, dest="seq_len")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--output", type=Path, default=None,
                          help="write the JSON report here instead of stdout")

    p_bench = sub.add_parser("bench", help="runtime-scaling sweep")
    p_bench.add_argument("--families", default=",".join(bench_mod.BENCH_FAMILIES),
                         help=f"comma list from {bench_mod.BENCH_FAMILIES}")
    p_bench.add_argument("--l-min", type=_positive_power_of_two, default=1 << 10)
    p_bench.add_argument("--l-max", type=_positive_power_of_two, default=1 << 16)
    p_bench.add_argument("--reps", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--output", type=Path, default=None,
                         help="CSV path; stdout when omitted")
    p_bench.add_argument("--no-plot", action="store_true")

    p_mat = sub.add_parser("materialize", help="dump per-head mixer matrices")
    p_mat.add_argument("--family", choices=families.FAMILIES, required=True)
    p_mat.add_argument("--mode", choices=("di", "dd", "dft"), default=None)
    p_mat.add_argument("--L", type=int, default=16, dest="seq_len")
    p_mat.add_argument("--seed", type=int, default=0)
    p_mat.add_argument("--output-dir", type=Path, required=True)
    p_mat.add_argument("--no-plot", action="store_true")

    p_toy = sub.add_parser("train-toy", help="bidirectional vs causal toy task")
    p_toy.add_argument("--steps", type=int, default=2000)
    p_toy.add_argument("--seed", type=int, default=0)
    p_toy.add_argument("--vocab", type=int, default=16)
    p_toy.add_argument("--L", type=int, default=64, dest="seq_len")
    p_toy.add_argument("--mask-rate", type=_mask_rate, default=0.15)
    p_toy.add_argument("--lr", type=float, default=None)
    p_toy.add_argument("--momentum", type=float, default=None)
    p_toy.add_argument("--batch-size", type=int, default=None)
    p_toy.add_argument("--output", type=Path, default=None,
                       help="training-log CSV path; stdout when omitted")
    p_toy.add_argument("--no-plot", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    if not (2 <= args.seq_len <= 256):
        print(f"error: --L must lie in [2, 256] (dense oracles), got {args.seq_len}",
              file=sys.stderr)
        return 2
    checks = None if args.check is None or "all" in args.check else list(args.check)
    try:
        jobs = suites.build_suite_jobs(checks=_expand_checks(checks),
                                       family=args.family, mode=args.mode,
                                       seq_len=args.seq_len, seed=args.seed,
                                       sam_parts=_sam_parts(checks))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    threads = max(1, int(os.environ.get("MIXERKIT_THREADS", "1")))
    merged = VerificationReport(suite="verify")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: job[1](), jobs))
    else:
        results = [fn() for _, fn in jobs]
    for rep in results:
        merged.merge(rep)
    for check in merged.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: measured={check.measured:.3g} "
              f"threshold={check.threshold:.3g}", file=sys.stderr)
    text = merged.to_json()
    if args.output is not None:
        args.output.write_text(text + "\n")
        print(f"report written to {args.output}", file=sys.stderr)
    else:
        print(text)
    return 0 if merged.passed else 1


def _expand_checks(checks):
    if checks is None:
        return None
    expanded = set()
    for c in checks:
        expanded.add("sam" if c in ("prefix", "extendability") else c)
    return sorted(expanded)


def _sam_parts(checks):
    if checks is None:
        return ("prefix", "extendability")
    parts = [c for c in checks if c in ("prefix", "extendability")]
    if parts and "sam" not in checks:
        return tuple(parts)
    return ("prefix", "extendability")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    names = tuple(name.strip() for name in args.families.split(",") if name.strip())
    unknown = set(names) - set(bench_mod.BENCH_FAMILIES)
    if unknown:
        print(f"error: unknown bench families {sorted(unknown)}", file=sys.stderr)
        return 2
    rows = bench_mod.run_bench(names, l_min=args.l_min, l_max=args.l_max,
                               reps=args.reps, seed=args.seed)
    csv_text = bench_mod.rows_to_csv(rows)
    if args.output is not None:
        args.output.write_text(csv_text)
        print(f"bench CSV written to {args.output}", file=sys.stderr)
        if not args.no_plot:
            from .plots import plot_bench
            fig = plot_bench(rows, str(args.output.with_suffix(".png")))
            print(f"figure written to {fig}", file=sys.stderr)
    else:
        sys.stdout.write(csv_text)
    return 0


# ---------------------------------------------------------------------------
# materialize
# ---------------------------------------------------------------------------

def cmd_materialize(args) -> int:
    if args.seq_len > 256:
        print(f"error: L={args.seq_len} exceeds the materialization cap (256)",
              file=sys.stderr)
        return 2
    mode = args.mode or families.FAMILY_MODES[args.family][0]
    if mode not in families.FAMILY_MODES[args.family]:
        print(f"error: family {args.family!r} has no {mode!r} construction",
              file=sys.stderr)
        return 2
    rng = Rng(args.seed)
    cfg = MixerConfig(seq_len=args.seq_len, in_channels=8, inner_dim=8,
                      n_heads=2, head_dim=4, qk_dim=4,
                      data_dependent=(mode == "dd"))
    spec = families.build_mixer(args.family, mode, cfg, rng, n_state=4)
    x = rng.normal((1, args.seq_len, cfg.in_channels)) if mode == "dd" else None
    mixer = families.materialize_family(spec, x)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for head in range(mixer.n_heads):
        path = args.output_dir / f"{args.family}_{mode}_head{head}.csv"
        np.savetxt(path, mixer.per_head[head], delimiter=",", fmt="%.17g")
        print(f"wrote {path}", file=sys.stderr)
    if not args.no_plot:
        from .plots import plot_matrix_heads
        fig = plot_matrix_heads(mixer.per_head,
                                str(args.output_dir / f"{args.family}_{mode}_heads.png"),
                                f"{args.family} ({mode}), L={args.seq_len}")
        print(f"figure written to {fig}", file=sys.stderr)
    return 0


def read_materialized(output_dir: Path, family: str, mode: str):
    """Re-read a matrix dump (the round-trip counterpart of materialize)."""
    from .framework import MaterializedMixer
    heads = []
    idx = 0
    while True:
        path = Path(output_dir) / f"{family}_{mode}_head{idx}.csv"
        if not path.exists():
            break
        heads.append(np.loadtxt(path, delimiter=",", ndmin=2))
        idx += 1
    if not heads:
        raise FileNotFoundError(f"no matrix dump for {family}/{mode} in {output_dir}")
    return MaterializedMixer(per_head=np.stack(heads))


# ---------------------------------------------------------------------------
# train-toy
# ---------------------------------------------------------------------------

def cmd_train_toy(args) -> int:
    overrides = {}
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.momentum is not None:
        overrides["momentum"] = args.momentum
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    try:
        cfg = ToyConfig(vocab=args.vocab, seq_len=args.seq_len,
                        mask_rate=args.mask_rate, steps=args.steps,
                        seed=args.seed, **overrides)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        bidir, causal = run_toy_task(cfg)
    except RuntimeError as exc:  # training divergence
        print(f"error: {exc}", file=sys.stderr)
        return 1
    lines = ["step,bidirectional_loss,causal_loss"]
    for (step, bl), (_, cl) in zip(bidir.log, causal.log):
        lines.append(f"{step},{bl:.17g},{cl:.17g}")
    csv_text = "\n".join(lines) + "\n"
    if args.output is not None:
        args.output.write_text(csv_text)
        print(f"training log written to {args.output}", file=sys.stderr)
        if not args.no_plot:
            from .plots import plot_training
            fig = plot_training([bidir, causal], str(args.output.with_suffix(".png")))
            print(f"figure written to {fig}", file=sys.stderr)
    else:
        sys.stdout.write(csv_text)
    for res in (bidir, causal):
        print(f"{res.name}: params={res.param_count} final_loss={res.final_loss:.4f} "
              f"masked_accuracy={res.masked_accuracy:.4f}", file=sys.stderr)
    gap = bidir.masked_accuracy - causal.masked_accuracy
    print(f"masked-accuracy gap (bidirectional - causal): {gap:+.4f}",
          file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "verify": cmd_verify,
        "bench": cmd_bench,
        "materialize": cmd_materialize,
        "train-toy": cmd_train_toy,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
