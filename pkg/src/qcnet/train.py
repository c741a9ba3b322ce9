"""Cost functions, particle swarm optimization and gradient refinement."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .exceptions import DegenerateNetworkError, QcnError, ValidationError
from .network import NetworkSpec, assemble_hamiltonian, dump_model
from .transport import Rates, current_forms

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingSet",
    "PsoConfig",
    "GdConfig",
    "TrainedModel",
    "TrainingError",
    "normalized_currents",
    "smooth_cost",
    "class_cost",
    "pso_minimize",
    "fd_gradient",
    "gradient_descent",
    "train_network",
    "cost_trace_csv",
]


class TrainingError(QcnError):
    """Training produced an unusable network; ``params_json`` holds the model."""

    def __init__(self, message, params_json=None):
        super().__init__(message)
        self.params_json = params_json


@dataclass(frozen=True)
class TrainingSet:
    """Unit input vectors (rows of ``phi``) with class labels in ``1..n_classes``."""

    phi: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        labels = np.asarray(self.labels).astype(int).ravel()
        if phi.shape[0] == 0:
            raise ValidationError("training set is empty")
        if labels.shape[0] != phi.shape[0]:
            raise ValidationError("one label per vector required")
        if np.any(labels < 1):
            raise ValidationError("labels start at 1")
        if np.any(np.abs(np.linalg.norm(phi, axis=1) - 1) > 1e-10):
            raise ValidationError("training vectors must be normalized")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple]) -> "TrainingSet":
        pairs = list(pairs)
        if not pairs:
            raise ValidationError("training set is empty")
        return cls(np.array([p for p, _ in pairs], dtype=float),
                   np.array([c for _, c in pairs], dtype=int))

    def __len__(self):
        return self.phi.shape[0]

    def check_against(self, spec: NetworkSpec):
        if self.phi.shape[1] != spec.n_in:
            raise ValidationError(f"vectors have length {self.phi.shape[1]}, network "
                                  f"has {spec.n_in} entry sites")
        if self.labels.max() > spec.n_out:
            raise ValidationError(f"label {self.labels.max()} exceeds {spec.n_out} exit sites")


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 50
    iterations: int = 300
    w: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    seed: int = 0
    vmax_frac: float = 0.5

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValidationError("swarm_size must be >= 2")
        if not 0 < self.w < 1:
            raise ValidationError("inertia w must lie in (0, 1)")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")


@dataclass(frozen=True)
class GdConfig:
    lr: float = 0.05
    iterations: int = 200
    h: float = 1e-4
    tol: float = 1e-14

    def __post_init__(self):
        if self.lr <= 0 or self.h <= 0:
            raise ValidationError("lr and h must be positive")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")


@dataclass
class TrainedModel:
    spec: NetworkSpec
    params: np.ndarray
    rates: Rates = field(default_factory=Rates)
    cost_trace: list = field(default_factory=list)  # (epoch, train_cost, val_cost | None)
    train_accuracy: float | None = None

    def to_json(self) -> str:
        return dump_model(self.spec, self.params,
                          rates={"gamma_in": self.rates.gamma_in, "gamma": self.rates.gamma,
                                 "dephasing": self.rates.dephasing})

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        from .network import load_model

        spec, params, extra = load_model(text)
        rates = Rates(**extra["rates"]) if "rates" in extra else Rates()
        return cls(spec, params, rates)


def normalized_currents(params, phi, spec: NetworkSpec, rates: Rates = Rates()) -> np.ndarray:
    """Exit currents divided by their sum, one row per input vector."""
    forms = current_forms(spec, assemble_hamiltonian(spec, params), rates)
    J = forms.currents(phi)
    total = J.sum(axis=1)
    if np.any(total < 1e-14):
        raise DegenerateNetworkError("total exit current vanishes for some input")
    return J / total[:, None]


def smooth_cost(params, ts: TrainingSet, spec: NetworkSpec, rates: Rates = Rates()) -> float:
    """Squared distance of normalized exit currents from one-hot class targets."""
    Jhat = normalized_currents(params, ts.phi, spec, rates)
    target = np.zeros_like(Jhat)
    target[np.arange(len(ts)), ts.labels - 1] = 1.0
    return float(np.sum((Jhat - target) ** 2))


def class_cost(params, ts: TrainingSet, spec: NetworkSpec, rates: Rates = Rates()) -> float:
    """Sum of squared differences between predicted and true class indices."""
    Jhat = normalized_currents(params, ts.phi, spec, rates)
    predicted = np.argmax(Jhat, axis=1) + 1
    return float(np.sum((predicted - ts.labels) ** 2))


def _safe(cost: Callable, x):
    try:
        value = float(cost(x))
    except DegenerateNetworkError:
        return np.inf
    return value if np.isfinite(value) else np.inf


def pso_minimize(cost: Callable, bounds, cfg: PsoConfig = PsoConfig(),
                 callback: Callable | None = None, map_fn: Callable = map):
    """Global-best particle swarm minimization inside a box.

    ``bounds`` is ``(lower, upper)``. Each particle owns an RNG stream spawned
    from ``cfg.seed``, so results do not depend on how ``map_fn`` schedules the
    cost evaluations. Particles whose cost raises DegenerateNetworkError get
    infinite fitness. ``callback(iteration, best_x, best_f)`` runs once per
    iteration.

    Returns
    -------
    best_x : ndarray
    best_f : float
    """
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if lo.shape != hi.shape or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValidationError("bounds must be finite arrays of equal shape")
    if np.any(hi < lo):
        raise ValidationError("upper bound below lower bound")
    dim = lo.size
    vmax = cfg.vmax_frac * (hi - lo)
    rngs = [np.random.default_rng(s)
            for s in np.random.SeedSequence(cfg.seed).spawn(cfg.swarm_size)]

    pos = np.array([r.uniform(lo, hi) for r in rngs])
    vel = np.array([r.uniform(-vmax, vmax) for r in rngs])
    fit = np.array(list(map_fn(lambda x: _safe(cost, x), list(pos))))
    pbest, pbest_f = pos.copy(), fit.copy()
    g = int(np.argmin(pbest_f))
    best_x, best_f = pbest[g].copy(), float(pbest_f[g])

    for it in range(cfg.iterations):
        for k, r in enumerate(rngs):
            r1, r2 = r.random(dim), r.random(dim)
            vel[k] = (cfg.w * vel[k] + cfg.c1 * r1 * (pbest[k] - pos[k])
                      + cfg.c2 * r2 * (best_x - pos[k]))
        np.clip(vel, -vmax, vmax, out=vel)
        pos = np.clip(pos + vel, lo, hi)
        fit = np.array(list(map_fn(lambda x: _safe(cost, x), list(pos))))
        improved = fit < pbest_f
        pbest[improved] = pos[improved]
        pbest_f[improved] = fit[improved]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < best_f:
            best_x, best_f = pbest[g].copy(), float(pbest_f[g])
        if callback is not None:
            callback(it, best_x, best_f)
    return best_x, best_f


def fd_gradient(cost: Callable, params, h: float = 1e-4, bounds=None) -> np.ndarray:
    """Central-difference gradient.

    With ``bounds``, the stencil of a coordinate closer than ``h`` to the box edge
    is shifted inside the box, falling back to a one-sided difference.
    """
    if h <= 0:
        raise ValidationError("step h must be positive")
    x = np.asarray(params, dtype=float)
    grad = np.empty_like(x)
    lo, hi = (None, None) if bounds is None else (np.asarray(b, dtype=float) for b in bounds)
    for k in range(x.size):
        up, down = x.copy(), x.copy()
        up[k] += h
        down[k] -= h
        if lo is not None:
            up[k] = min(up[k], hi[k])
            down[k] = max(down[k], lo[k])
        step = up[k] - down[k]
        grad[k] = 0.0 if step == 0 else (cost(up) - cost(down)) / step
    return grad


def gradient_descent(cost: Callable, start, lr: float = 0.05, iters: int = 200,
                     h: float = 1e-4, bounds=None, tol: float = 1e-14,
                     callback: Callable | None = None):
    """Finite-difference gradient descent with step halving on uphill moves.

    The step grows by 1.5x after each accepted move. Returns the best point
    visited and its cost; never worse than ``start``.
    """
    if lr <= 0:
        raise ValidationError("learning rate must be positive")
    x = np.asarray(start, dtype=float).copy()
    fx = _safe(cost, x)
    if not np.isfinite(fx):
        return x, fx
    lo, hi = (None, None) if bounds is None else (np.asarray(b, dtype=float) for b in bounds)
    step = lr
    for it in range(iters):
        try:
            grad = fd_gradient(cost, x, h, bounds)
        except DegenerateNetworkError:
            break
        if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) == 0:
            break
        while step > lr * 1e-10:
            trial = x - step * grad
            if lo is not None:
                trial = np.clip(trial, lo, hi)
            ft = _safe(cost, trial)
            if ft < fx:
                break
            step *= 0.5
        else:
            break
        gain = fx - ft
        x, fx = trial, ft
        step *= 1.5
        if callback is not None:
            callback(it, x, fx)
        if gain < tol:
            break
    return x, fx


def train_network(spec: NetworkSpec, ts: TrainingSet, pso_cfg: PsoConfig = PsoConfig(),
                  gd_cfg: GdConfig = GdConfig(), rates: Rates = Rates(),
                  validation: TrainingSet | None = None, map_fn: Callable = map) -> TrainedModel:
    """PSO on the smooth cost followed by gradient refinement.

    One PSO iteration is one epoch of the cost trace; accepted gradient steps
    are appended as further epochs. The validation column of the trace holds
    the smooth cost of the best-so-far parameters on ``validation`` (if given).
    """
    ts.check_against(spec)
    if validation is not None:
        validation.check_against(spec)
    if spec.n_in > spec.n_hidden and not spec.train_onsite and rates.dephasing == 0:
        raise ValidationError(
            f"{spec.n_in - spec.n_hidden} entry-layer modes are decoupled from the hidden "
            "layer when L > M; enable train_onsite (or dephasing) for this topology")

    def cost(p):
        return smooth_cost(p, ts, spec, rates)

    def val_cost(p):
        if validation is None:
            return None
        return _safe(lambda q: smooth_cost(q, validation, spec, rates), p)

    trace = []

    def record(_it, x, f):
        trace.append((len(trace) + 1, f, val_cost(x)))

    bounds = spec.bounds()
    x, f = pso_minimize(cost, bounds, pso_cfg, callback=record, map_fn=map_fn)
    if not np.isfinite(f):
        raise TrainingError("no particle found a non-degenerate network",
                            dump_model(spec, x))
    logger.debug("PSO finished with cost %.6g", f)
    x, f = gradient_descent(cost, x, gd_cfg.lr, gd_cfg.iterations, gd_cfg.h, bounds,
                            gd_cfg.tol, callback=record)
    logger.debug("gradient refinement finished with cost %.6g", f)
    try:
        Jhat = normalized_currents(x, ts.phi, spec, rates)
    except QcnError as exc:
        raise TrainingError(f"trained network failed to evaluate: {exc}",
                            dump_model(spec, x)) from exc
    acc = float(np.mean(np.argmax(Jhat, axis=1) + 1 == ts.labels))
    return TrainedModel(spec, x, rates, trace, acc)


def cost_trace_csv(model: TrainedModel) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_cost", "val_cost"])
    for epoch, train, val in model.cost_trace:
        writer.writerow([epoch, repr(float(train)), "" if val is None else repr(float(val))])
    return buf.getvalue()
