"""Figure output through matplotlib's Agg backend.

SVGs are written with a fixed hash salt and no date metadata so the same
data always produces the same bytes.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .numerics import atomic_write_bytes  # noqa: E402

_RC = {"svg.hashsalt": "gazecontact", "svg.fonttype": "none", "path.simplify": False}


def save_figure(fig, path) -> None:
    """Render ``fig`` to ``path`` (format from the extension) atomically, then close it."""
    fmt = str(path).rsplit(".", 1)[-1].lower()
    buf = io.BytesIO()
    with matplotlib.rc_context(_RC):
        meta = {"Date": None} if fmt == "svg" else None
        fig.savefig(buf, format=fmt, metadata=meta)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_pr_curve(path, recall, precision, label: str = "", auc_pr: float | None = None) -> None:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        # step plot: precision holds until the next recall increment
        r = np.concatenate([[0.0], np.asarray(recall, dtype=float)])
        p = np.concatenate([[1.0 if len(precision) else 0.0], np.asarray(precision, dtype=float)])
        title = label
        if auc_pr is not None:
            title = f"{label} AUC-PR {auc_pr:.3f}".strip()
        ax.step(r, p, where="post")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        save_figure(fig, path)


def plot_histograms(path, stats) -> None:
    """Face-centre and pose histograms in a 2x3 grid."""
    with matplotlib.rc_context(_RC):
        fig, axes = plt.subplots(2, 3, figsize=(10, 6))
        panels = [("center_x", stats.position_edges), ("center_y", stats.position_edges), (None, None),
                  ("yaw", stats.angle_edges), ("pitch", stats.angle_edges), ("roll", stats.angle_edges)]
        for ax, (name, edges) in zip(axes.ravel(), panels):
            if name is None:
                ax.axis("off")
                continue
            counts = stats.counts[name]
            ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="none")
            ax.set_title(name)
        fig.tight_layout()
        save_figure(fig, path)


def plot_size_curve(path, sessions, precision, recall, label: str = "") -> None:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(sessions, precision, marker="o", label="precision")
        ax.plot(sessions, recall, marker="s", label="recall")
        ax.set_xlabel("training sessions")
        ax.set_ylim(0, 1.02)
        ax.set_title(label)
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        save_figure(fig, path)


def plot_training_log(path, log) -> None:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(log.iteration, log.ce, label="cross-entropy", lw=0.8)
        if any(log.pose):
            ax.plot(log.iteration, log.pose, label="pose", lw=0.8)
        ax.set_xlabel("iteration")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        save_figure(fig, path)
