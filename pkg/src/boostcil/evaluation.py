"""Metrics and report emission.

Per session: top-1 accuracy over all seen classes, old/new split, a count
confusion matrix (rows are true labels), parameter counts, and the
teacher-student accuracy gap where a compression stage ran. A run report
aggregates sessions plus the arithmetic mean of their accuracies.

``emit_reports`` writes results.json and curve.csv deterministically
(byte-identical across re-runs of the same report), confusion heatmaps as
PNG, and the raw confusion counts as an npz sidecar so plots can be rebuilt
without rerunning the experiment.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidProtocolError
from .loops import predict_logits
from .models import parameter_count

RESULTS_NAME = "results.json"
CURVE_NAME = "curve.csv"
CONFUSION_NAME = "confusion.npz"


@dataclass
class SessionReport:
    session: int
    acc: float
    acc_old: float | None
    acc_new: float
    confusion: np.ndarray | None = field(repr=False, compare=False)
    params_trainable: int = 0
    params_total: int = 0
    gap: float | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.session,
            "acc": self.acc,
            "acc_old": self.acc_old,
            "acc_new": self.acc_new,
            "params_trainable": self.params_trainable,
            "params_total": self.params_total,
            "gap": self.gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionReport":
        return cls(
            session=d["t"],
            acc=d["acc"],
            acc_old=d["acc_old"],
            acc_new=d["acc_new"],
            confusion=None,
            params_trainable=d["params_trainable"],
            params_total=d["params_total"],
            gap=d["gap"],
        )


@dataclass
class RunReport:
    sessions: list[SessionReport]
    avg_inc_acc: float
    config: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "sessions": [s.to_dict() for s in self.sessions],
            "avg_inc_acc": self.avg_inc_acc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            sessions=[SessionReport.from_dict(s) for s in d["sessions"]],
            avg_inc_acc=d["avg_inc_acc"],
            config=d["config"],
            seed=d["seed"],
        )


def confusion_matrix(true_labels: np.ndarray, predictions: np.ndarray, k: int) -> np.ndarray:
    """k x k count matrix; rows are true labels, columns predictions."""
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (true_labels, predictions), 1)
    return m


def evaluate_session(model, session, gap: float | None = None) -> SessionReport:
    """Accuracy over all seen classes, split into old and new blocks."""
    if len(session.test_y) == 0:
        raise InvalidProtocolError("empty test set", session=session.index)
    if session.test_y.max() >= session.num_seen or session.test_y.min() < 0:
        raise InvalidProtocolError(
            "test labels outside the seen-class range", session=session.index
        )
    preds = predict_logits(model, session.test_x).argmax(1).numpy()
    true = session.test_y
    correct = preds == true
    old_mask = true < session.num_old
    acc_old = float(correct[old_mask].mean()) if old_mask.any() else None
    trainable, total = parameter_count(model)
    return SessionReport(
        session=session.index,
        acc=float(correct.mean()),
        acc_old=acc_old,
        acc_new=float(correct[~old_mask].mean()),
        confusion=confusion_matrix(true, preds, session.num_seen),
        params_trainable=trainable,
        params_total=total,
        gap=gap,
    )


def average_incremental_accuracy(reports) -> float:
    accs = [r.acc for r in reports]
    if not accs:
        raise ValueError("need at least one session report")
    return float(np.mean(accs))


def _plot_confusion(matrix: np.ndarray, path: str, title: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _plot_curve(ts, accs, path: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.plot(ts, accs, marker="o")
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy over seen classes")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def emit_reports(run: RunReport, out_dir) -> list[str]:
    """Write results.json, curve.csv, confusion sidecar + heatmaps, curve plot.

    JSON and CSV bytes depend only on the report contents, so re-running the
    same configuration reproduces them exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    results_path = os.path.join(out_dir, RESULTS_NAME)
    with open(results_path, "w") as fh:
        fh.write(json.dumps(run.to_dict(), sort_keys=True, indent=2) + "\n")
    written.append(results_path)

    curve_path = os.path.join(out_dir, CURVE_NAME)
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "acc"])
        for s in run.sessions:
            writer.writerow([s.session, f"{s.acc:.6f}"])
    written.append(curve_path)

    confusions = {
        f"session_{s.session}": s.confusion for s in run.sessions if s.confusion is not None
    }
    if confusions:
        npz_path = os.path.join(out_dir, CONFUSION_NAME)
        np.savez(npz_path, **confusions)
        written.append(npz_path)
    written.extend(render_plots(run.to_dict(), confusions, out_dir))
    return written


def render_plots(results: dict, confusions: dict, out_dir) -> list[str]:
    ts = [s["t"] for s in results["sessions"]]
    accs = [s["acc"] for s in results["sessions"]]
    curve_png = os.path.join(out_dir, "curve.png")
    _plot_curve(ts, accs, curve_png)
    written = [curve_png]
    for name, matrix in sorted(confusions.items()):
        t = name.split("_")[-1]
        path = os.path.join(out_dir, f"confusion_{t}.png")
        _plot_confusion(np.asarray(matrix), path, f"session {t}")
        written.append(path)
    return written


def regenerate_reports(out_dir) -> list[str]:
    """Rebuild plots from a results directory without rerunning anything."""
    results_path = os.path.join(out_dir, RESULTS_NAME)
    if not os.path.exists(results_path):
        raise FileNotFoundError(f"no {RESULTS_NAME} in {out_dir}")
    with open(results_path) as fh:
        results = json.load(fh)
    confusions = {}
    npz_path = os.path.join(out_dir, CONFUSION_NAME)
    if os.path.exists(npz_path):
        with np.load(npz_path) as data:
            confusions = {k: data[k] for k in data.files}
    return render_plots(results, confusions, out_dir)
