"""Report emission: delimited files plus matplotlib renderings.

Every report lands twice in the run directory: a CSV (the primary,
byte-reproducible output) and a PNG figure next to it for quick reading.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .decomposition import DecompReport
from .fileio import fmt
from .kws import RocCurve
from .pruning import PruneHistory

# strip volatile metadata so identical runs produce identical PNG bytes
_PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


# ---------------------------------------------------------------------------
# prune history


def write_history_csv(history: PruneHistory, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("generation,remain_rate,loss,frame_acc\n")
        for rec in history.records:
            fh.write(
                f"{rec.generation},{fmt(rec.remain_rate)},{fmt(rec.loss)},{fmt(rec.frame_acc)}\n"
            )


def plot_history(history: PruneHistory, path, title="prune history") -> None:
    gens = [r.generation for r in history.records]
    rates = [r.remain_rate for r in history.records]
    accs = [r.frame_acc for r in history.records]
    losses = [r.loss for r in history.records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(gens, accs, "o-", color="tab:blue", label="frame accuracy")
    ax.plot(gens, rates, "s--", color="tab:gray", label="remain rate")
    ax.set_xlabel("generation")
    ax.set_ylabel("frame accuracy / remain rate")
    ax.set_ylim(0.0, 1.05)
    ax2 = ax.twinx()
    ax2.plot(gens, losses, "^-", color="tab:red", label="loss")
    ax2.set_ylabel("cross-entropy loss")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center right")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


# ---------------------------------------------------------------------------
# ROC


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("threshold,ta_rate,fa_per_hour\n")
        for p in curve.points:
            fh.write(f"{fmt(p.threshold)},{fmt(p.ta_rate)},{fmt(p.fa_per_hour)}\n")


def plot_roc(curve: RocCurve, path, title="keyword ROC") -> None:
    pts = sorted(curve.points, key=lambda p: p.threshold)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot([p.fa_per_hour for p in pts], [p.ta_rate for p in pts], "o-")
    ax.set_xlabel("false alarms per hour")
    ax.set_ylabel("true alarm rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


# ---------------------------------------------------------------------------
# decomposition


def write_decomp_csv(report: DecompReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("layer,m,n,r,frob_error,oracle_error,params_before,params_after\n")
        for rec in report.records:
            fh.write(
                f"{rec.layer},{rec.m},{rec.n},{rec.r},{fmt(rec.frob_error)},"
                f"{fmt(rec.oracle_error)},{rec.params_before},{rec.params_after}\n"
            )


def plot_decomp(report: DecompReport, path, title="low-rank compression") -> None:
    layers = [str(rec.layer) for rec in report.records]
    trained = [rec.frob_error for rec in report.records]
    optimal = [rec.oracle_error for rec in report.records]
    x = range(len(layers))
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    width = 0.38
    ax.bar([i - width / 2 for i in x], trained, width, label="trained factors")
    ax.bar([i + width / 2 for i in x], optimal, width, label="SVD optimum")
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"layer {l}" for l in layers])
    ax.set_ylabel("Frobenius reconstruction error")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
