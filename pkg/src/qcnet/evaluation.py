"""Class rule, confusion matrices and classification metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateNetworkError, ValidationError
from .lindblad import (build_liouvillian, drain_operators, dephasing_operators,
                       embed_hamiltonian, exit_currents, source_operator, steady_state)
from .network import assemble_hamiltonian
from .tasks import OverlapTask, overlap_scores
from .train import TrainedModel
from .transport import current_forms

__all__ = [
    "BalancePoint",
    "model_currents",
    "classify",
    "classify_many",
    "confusion",
    "confusion_from_labels",
    "precision_recall",
    "accuracy",
    "balances",
    "balance_points",
    "metrics_report",
    "balance_csv",
]


@dataclass(frozen=True)
class BalancePoint:
    eta_tilde: float
    j_tilde: float


def _liouvillian_currents(model: TrainedModel, psi) -> np.ndarray:
    spec, rates = model.spec, model.rates
    H = embed_hamiltonian(assemble_hamiltonian(spec, model.params))
    drains = drain_operators(spec, rates.gamma)
    ops = ([source_operator(psi, rates.gamma_in, spec.dim)] + drains
           + dephasing_operators(spec, rates.dephasing))
    return exit_currents(steady_state(build_liouvillian(H, ops)), drains)


def model_currents(model: TrainedModel, Psi, method: str = "transport") -> np.ndarray:
    """Steady-state exit currents, one row per input.

    ``method="liouvillian"`` solves the full vectorized master equation per
    input instead of the quadratic-form shortcut; both give the same numbers.
    """
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    if Psi.shape[1] != model.spec.n_in:
        raise ValidationError(f"inputs must have length {model.spec.n_in}")
    if np.any(np.abs(np.linalg.norm(Psi, axis=1) - 1) > 1e-10):
        raise ValidationError("inputs must be normalized")
    if method == "liouvillian":
        return np.array([_liouvillian_currents(model, psi) for psi in Psi])
    if method != "transport":
        raise ValidationError(f"unknown method {method!r}")
    H = assemble_hamiltonian(model.spec, model.params)
    return current_forms(model.spec, H, model.rates).currents(Psi)


TIE_RTOL = 1e-12


def classify_many(model: TrainedModel, Psi, method: str = "transport") -> np.ndarray:
    """Drain index (from 1) with maximal current.

    Currents within ``TIE_RTOL`` of the maximum count as tied, so rounding
    noise cannot break a symmetry; ties go to the lowest index.
    """
    J = model_currents(model, Psi, method)
    top = J.max(axis=1, keepdims=True)
    return np.argmax(J >= top - TIE_RTOL * np.abs(top), axis=1) + 1


def classify(model: TrainedModel, psi, method: str = "transport") -> int:
    return int(classify_many(model, psi, method)[0])


def confusion_from_labels(true, pred, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted class."""
    true, pred = np.asarray(true, dtype=int), np.asarray(pred, dtype=int)
    if true.shape != pred.shape:
        raise ValidationError("true and predicted labels differ in length")
    if true.size and (min(true.min(), pred.min()) < 1
                      or max(true.max(), pred.max()) > n_classes):
        raise ValidationError(f"labels must lie in 1..{n_classes}")
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (true - 1, pred - 1), 1)
    return cm


def confusion(model: TrainedModel, validation, method: str = "transport") -> np.ndarray:
    """Confusion matrix of ``model`` on ``(phi, labels)`` pairs or a LabeledStates."""
    if hasattr(validation, "phi"):
        phi, labels = validation.phi, validation.labels
    else:
        validation = list(validation)
        phi = np.array([p for p, _ in validation], dtype=float).reshape(-1, model.spec.n_in)
        labels = np.array([c for _, c in validation], dtype=int)
    n = model.spec.n_out
    if len(labels) == 0:
        return np.zeros((n, n), dtype=int)
    return confusion_from_labels(labels, classify_many(model, phi, method), n)


def precision_recall(cm) -> dict:
    """Per-class precision/recall and their macro averages.

    A class with no predictions (or no true members) has precision (recall)
    ``None``; undefined values are left out of the macro average.
    """
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    per_class = []
    for c in range(cm.shape[0]):
        P = tp[c] / pred_tot[c] if pred_tot[c] else None
        R = tp[c] / true_tot[c] if true_tot[c] else None
        per_class.append({"P": P, "R": R})

    def macro(key):
        vals = [d[key] for d in per_class if d[key] is not None]
        return float(np.mean(vals)) if vals else None

    return {"per_class": per_class, "macro_P": macro("P"), "macro_R": macro("R")}


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValidationError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm) / total)


def balance_points(model: TrainedModel, task: OverlapTask, Psi) -> np.ndarray:
    """Overlap and current balances for each row of ``Psi``, shape ``(n, 2)``."""
    if task.n_groups != 2 or model.spec.n_out != 2:
        raise ValidationError("balances are defined for two classes")
    eta = overlap_scores(Psi, task)
    J = model_currents(model, Psi)
    eta_sum, j_sum = eta.sum(axis=1), J.sum(axis=1)
    if np.any(eta_sum == 0):
        raise ValidationError("input has zero overlap with both groups")
    if np.any(j_sum == 0):
        raise DegenerateNetworkError("input produces no exit current")
    return np.stack([(eta[:, 0] - eta[:, 1]) / eta_sum, (J[:, 0] - J[:, 1]) / j_sum], axis=1)


def balances(model: TrainedModel, task: OverlapTask, psi) -> BalancePoint:
    eta_t, j_t = balance_points(model, task, psi)[0]
    return BalancePoint(float(eta_t), float(j_t))


def metrics_report(cm, excluded_count: int = 0) -> dict:
    """JSON-ready metrics: confusion, per-class P/R, macro P/R, accuracy."""
    cm = np.asarray(cm)
    pr = precision_recall(cm)
    return {
        "confusion": cm.tolist(),
        "per_class": pr["per_class"],
        "macro_P": pr["macro_P"],
        "macro_R": pr["macro_R"],
        "accuracy": accuracy(cm) if cm.sum() else None,
        "excluded_count": int(excluded_count),
    }


def balance_csv(points, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta_tilde", "j_tilde"])
    for eta_t, j_t in np.asarray(points):
        w.writerow([repr(float(eta_t)), repr(float(j_t))])
    return buf.getvalue()
