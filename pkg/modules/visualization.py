"""Training-curve and ablation figures, rendered off-screen to PNG."""
import math
from pathlib import Path
from typing import Dict, Mapping, Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from core.models import EpochRecord  # noqa: E402
from utils.helpers import atomic_write  # noqa: E402
from utils.logger import Logger  # noqa: E402

logger = Logger.get_logger()


def _figure(panels: int, width: float = 4.0):
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    fig, axes = plt.subplots(1, panels, figsize=(width * panels, width * golden_ratio + 0.6), squeeze=False)
    return fig, axes[0]


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    with atomic_write(Path(path), 'wb') as f:
        fig.savefig(f, format='png', dpi=120)
    plt.close(fig)
    logger.info(f"Saved figure to {path}")


def plot_history(history: Sequence[EpochRecord], path: Path, title: str = "") -> None:
    if not history:
        raise ValueError("no epochs to plot")
    epochs = [r.epoch for r in history]
    fig, (ax_loss, ax_acc, ax_lr) = _figure(3)

    ax_loss.plot(epochs, [r.loss for r in history], '-o', color='black', linewidth=1.5, markersize=3)
    ax_loss.set_ylabel('training loss')

    ax_acc.plot(epochs, [r.train_acc for r in history], '-^', color='red', linewidth=1.5,
                markersize=3, label='train')
    ax_acc.plot(epochs, [r.val_acc for r in history], '-x', color='blue', linewidth=1.5,
                markersize=3, label='val')
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.set_ylabel('accuracy')
    ax_acc.legend()

    ax_lr.plot(epochs, [r.lr for r in history], '-', color='gray', linewidth=1.5)
    ax_lr.set_ylabel('learning rate')

    for ax in (ax_loss, ax_acc, ax_lr):
        ax.set_xlabel('epoch')
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_ablation(summary: Mapping[str, Mapping[str, float]], path: Path) -> None:
    """One bar panel per ablation group, median validation accuracy per arm."""
    if not summary:
        raise ValueError("empty ablation summary")
    fig, axes = _figure(len(summary))
    for ax, (group, arms) in zip(axes, summary.items()):
        names = list(arms)
        values = [arms[n] for n in names]
        bars = ax.bar(range(len(names)), values, color='steelblue', width=0.6)
        for bar, value in zip(bars, values):
            ax.annotate(f"{100 * value:.1f}", (bar.get_x() + bar.get_width() / 2, value),
                        ha='center', va='bottom', fontsize=8)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20)
        ax.set_ylim(0.0, 1.05)
        ax.set_title(group)
        ax.set_ylabel('median val accuracy')
        ax.grid(axis='y', alpha=0.3)
    _save(fig, path)


def medians_from_records(records: Sequence[Dict]) -> Dict[str, Dict[str, float]]:
    """Group ablation JSON-lines records into {group: {arm: median val_acc}}."""
    grouped: Dict[str, Dict[str, list]] = {}
    for rec in records:
        grouped.setdefault(rec['group'], {}).setdefault(rec['arm'], []).append(rec['val_acc'])
    return {g: {a: float(np.median(v)) for a, v in arms.items()} for g, arms in grouped.items()}
