"""Figures for the report commands (matplotlib, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .verify import REACHABLE, UNTESTED, ReachabilityMatrix  # noqa: E402

_LEVEL = {REACHABLE: 1.0, UNTESTED: 0.5}


def matrix_array(matrix: ReachabilityMatrix) -> np.ndarray:
    """1 reachable, 0 unreachable, 0.5 untested."""
    return np.array([[_LEVEL.get(c, 0.0) for c in row] for row in matrix.cells], dtype=float)


def render_matrix_figure(matrix: ReachabilityMatrix, path, title: str = "Reachability") -> None:
    n = len(matrix.hosts)
    size = max(4.0, min(0.12 * n + 2, 14.0))
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(matrix_array(matrix), cmap="Greens", vmin=0, vmax=1, interpolation="nearest")
    fontsize = 8 if n <= 30 else 4
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(matrix.hosts, rotation=90, fontsize=fontsize)
    ax.set_yticklabels(matrix.hosts, fontsize=fontsize)
    ax.set_xlabel("destination")
    ax.set_ylabel("source")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_pool_figure(pools, path) -> None:
    """Stacked bars of leased vs free addresses per DHCP server."""
    fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(pools) + 2), 4))
    names = [p.server for p in pools]
    leased = np.array([p.leases for p in pools])
    free = np.array([p.free for p in pools])
    x = np.arange(len(pools))
    ax.bar(x, leased, label="leased", color="tab:blue")
    ax.bar(x, free, bottom=leased, label="free", color="lightgrey")
    for i, p in enumerate(pools):
        if p.exhaustion_events:
            ax.annotate(f"{p.exhaustion_events} exhausted", (i, p.size), ha="center", va="bottom")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("addresses")
    ax.set_title("DHCP pool usage")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
