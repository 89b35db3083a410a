"""Figure rendering for the CLI report paths. Every figure accompanies a
delimited file; the CSV/JSON outputs remain the canonical contract and
nothing downstream depends on the images."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_bench(rows, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    by_family: dict[str, list] = {}
    for r in rows:
        by_family.setdefault(r.family, []).append(r)
    for family, frows in by_family.items():
        ls = [r.seq_len for r in frows]
        ts = [r.median_ns for r in frows]
        ax.loglog(ls, ts, marker="o", base=2,
                  label=f"{family} (slope {frows[0].slope:.2f})")
    ax.set_xlabel("sequence length L")
    ax.set_ylabel("median time (ns)")
    ax.set_title("apply-path runtime scaling")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training(results, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for res in results:
        steps = [s for s, _ in res.log]
        losses = [l for _, l in res.log]
        ax.plot(steps, losses,
                label=f"{res.name} (masked acc {res.masked_accuracy:.3f})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("masked-reconstruction training")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_matrix_heads(per_head: np.ndarray, path: str, title: str) -> str:
    h = per_head.shape[0]
    fig, axes = plt.subplots(1, h, figsize=(4.0 * h, 3.6), squeeze=False)
    vmax = float(np.max(np.abs(per_head))) or 1.0
    for i in range(h):
        ax = axes[0][i]
        im = ax.imshow(per_head[i], cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_title(f"head {i}")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
