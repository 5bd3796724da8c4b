"""Matplotlib figure rendering for evaluation and spectral reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("agg")

import matplotlib.pyplot as plt  # noqa: E402

from .denoise import PsdProfile  # noqa: E402
from .evaluate import EvalReport  # noqa: E402
from .overlay import PALETTE  # noqa: E402


def _class_color(label: str) -> str:
    r, g, b = PALETTE.get(label, (0, 0, 0))
    return f"#{r:02x}{g:02x}{b:02x}"


def plot_pr_curves(report: EvalReport, out_path: Path | str) -> Path:
    """One PR step-curve per class, AP in the legend, mAP in the title."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for label, ce in sorted(report.per_class.items()):
        if ce.pr:
            recalls = [0.0] + [r for r, _ in ce.pr]
            precisions = [ce.pr[0][1]] + [p for _, p in ce.pr]
        else:
            recalls, precisions = [0.0], [0.0]
        ax.step(recalls, precisions, where="post", color=_class_color(label),
                label=f"{label} (AP {ce.ap:.3f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.05)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    ax.set_title(f"precision-recall (mAP {report.map_score:.3f})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_psd_profiles(
    profiles: dict[str, PsdProfile],
    out_path: Path | str,
    low_cutoff: float | None = None,
    high_cutoff: float | None = None,
) -> Path:
    """Radial PSD curves on a log scale with optional band boundary markers."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, profile in profiles.items():
        ax.plot(profile.freqs, profile.power, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("spatial frequency (cycles/pixel)")
    ax.set_ylabel("mean power per bin")
    if low_cutoff is not None:
        ax.axvline(low_cutoff, color="gray", linestyle="--", linewidth=1)
    if high_cutoff is not None:
        ax.axvline(high_cutoff, color="gray", linestyle=":", linewidth=1)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("radial power spectral density")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
