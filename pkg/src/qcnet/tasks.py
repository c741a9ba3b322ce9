"""Labeled datasets: group-overlap and localization tasks, substrate descriptors."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, ValidationError
from .train import TrainingSet

__all__ = [
    "OverlapTask",
    "IprTask",
    "SubstrateTable",
    "LabeledStates",
    "SUBSTRATE_CLASSES",
    "random_real_state",
    "random_real_states",
    "two_state_task",
    "random_overlap_task",
    "overlap_scores",
    "overlap_label",
    "overlap_labels",
    "ipr",
    "ipr_labels",
    "gen_ipr_task",
    "sample_ipr_states",
    "load_substrates",
    "synthetic_substrates",
    "substrates_to_csv",
    "normalize_features",
    "split_train_validate",
]

SUBSTRATE_CLASSES = {1: "SIPr+BA", 2: "SIPr", 3: "TAC"}


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def random_real_state(L: int, rng=None, nonnegative: bool = False) -> np.ndarray:
    """A random real unit vector, uniform on the sphere (or its positive orthant)."""
    return random_real_states(1, L, rng, nonnegative)[0]


def random_real_states(n: int, L: int, rng=None, nonnegative: bool = False) -> np.ndarray:
    if L < 1:
        raise ValidationError("L must be >= 1")
    rng = _rng(rng)
    X = rng.standard_normal((n, L))
    if nonnegative:
        X = np.abs(X)
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@dataclass(frozen=True)
class LabeledStates:
    """Unit vectors with labels; unlike TrainingSet may be empty."""

    phi: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass
class OverlapTask:
    """``groups[g, n]`` is the n-th reference vector of group ``g + 1``."""

    groups: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.groups = np.asarray(self.groups, dtype=float)
        if self.groups.ndim != 3 or self.groups.shape[0] < 2:
            raise ValidationError("need an array of shape (G >= 2, N_G, L)")
        if np.any(np.abs(np.linalg.norm(self.groups, axis=2) - 1) > 1e-10):
            raise ValidationError("group vectors must be normalized")

    @property
    def n_groups(self) -> int:
        return self.groups.shape[0]

    @property
    def L(self) -> int:
        return self.groups.shape[2]

    @property
    def degenerate(self) -> bool:
        """True when two groups are identical, so no input can be told apart."""
        G = self.n_groups
        return any(np.allclose(self.groups[a], self.groups[b])
                   for a in range(G) for b in range(a + 1, G))

    def training_set(self) -> TrainingSet:
        G, NG, L = self.groups.shape
        return TrainingSet(self.groups.reshape(G * NG, L), np.repeat(np.arange(1, G + 1), NG))

    def to_json(self) -> str:
        return json.dumps({"kind": "overlap", "params": self.params,
                           "groups": self.groups.tolist()}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OverlapTask":
        d = json.loads(text)
        return cls(np.array(d["groups"]), d.get("params", {}))


def two_state_task(x: float) -> OverlapTask:
    """Groups {(cos x, sin x)} and {(sin x, cos x)}."""
    c, s = np.cos(x), np.sin(x)
    return OverlapTask(np.array([[[c, s]], [[s, c]]]), {"x": float(x)})


def random_overlap_task(L: int, G: int, N_G: int, seed=None, mirrored=None) -> OverlapTask:
    """G groups of N_G random vectors.

    For ``L == 2`` the vectors are ``(cos x, sin x)`` with ``x ~ U[0, pi/2]``;
    otherwise they are uniform on the unit sphere. With ``mirrored`` (the
    default for two qubit groups) the second group holds the swapped partners
    ``(sin x, cos x)`` of the first, generalizing :func:`two_state_task` to
    ``N_G`` random angles.
    """
    if G < 2 or N_G < 1:
        raise ValidationError("need G >= 2 and N_G >= 1")
    if mirrored is None:
        mirrored = L == 2 and G == 2
    if mirrored and not (L == 2 and G == 2):
        raise ValidationError("mirrored groups need L == 2 and G == 2")
    rng = _rng(seed)
    if mirrored:
        x = rng.uniform(0.0, np.pi / 2, size=N_G)
        c, s = np.cos(x), np.sin(x)
        groups = np.array([np.stack([c, s], axis=1), np.stack([s, c], axis=1)])
    elif L == 2:
        x = rng.uniform(0.0, np.pi / 2, size=(G, N_G))
        groups = np.stack([np.cos(x), np.sin(x)], axis=-1)
    else:
        groups = random_real_states(G * N_G, L, rng).reshape(G, N_G, L)
    params = {"L": L, "G": G, "N_G": N_G, "mirrored": bool(mirrored)}
    if not isinstance(seed, np.random.Generator):
        params["seed"] = seed
    return OverlapTask(groups, params)


def overlap_scores(Psi, task: OverlapTask) -> np.ndarray:
    """Mean squared overlap with each group, shape ``(n, G)``."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    return np.mean(np.einsum("gkl,nl->ngk", task.groups, Psi) ** 2, axis=2)


def overlap_labels(Psi, task: OverlapTask, tie_tol: float = 0.0):
    """Ground-truth classes and a mask of exact (within ``tie_tol``) ties."""
    eta = overlap_scores(Psi, task)
    labels = np.argmax(eta, axis=1) + 1
    top = np.sort(eta, axis=1)
    ties = top[:, -1] - top[:, -2] <= tie_tol
    return labels, ties


def overlap_label(psi, task: OverlapTask) -> int:
    """Index (from 1) of the group with the largest mean overlap; ties go low."""
    return int(overlap_labels(psi, task)[0][0])


def ipr(psi) -> float | np.ndarray:
    """Inverse participation ratio; accepts one vector or rows of a matrix."""
    psi = np.asarray(psi, dtype=float)
    val = 1.0 / np.sum(psi ** 4, axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def ipr_labels(Psi, lo: float = 2.0, hi: float = 3.0) -> np.ndarray:
    """1 for localized (IPR < lo), 2 for extended (IPR > hi), 0 inside the band."""
    I = ipr(np.atleast_2d(Psi))
    return np.where(I < lo, 1, np.where(I > hi, 2, 0))


@dataclass
class IprTask:
    phi: np.ndarray
    labels: np.ndarray
    lo: float = 2.0
    hi: float = 3.0
    params: dict = field(default_factory=dict)

    def training_set(self) -> TrainingSet:
        return TrainingSet(self.phi, self.labels)

    def to_json(self) -> str:
        return json.dumps({"kind": "ipr", "lo": self.lo, "hi": self.hi, "params": self.params,
                           "phi": self.phi.tolist(), "labels": self.labels.tolist()},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IprTask":
        d = json.loads(text)
        return cls(np.array(d["phi"]), np.array(d["labels"]), d["lo"], d["hi"],
                   d.get("params", {}))


def _localized_proposal(L, rng, nonnegative, noise):
    v = np.zeros(L)
    v[rng.integers(L)] = 1.0
    v = v + noise * rng.standard_normal(L)
    if nonnegative:
        v = np.abs(v)
    return v / np.linalg.norm(v)


def sample_ipr_states(n_per_class, L, lo=2.0, hi=3.0, rng=None, nonnegative=True,
                      budget=100_000):
    """Balanced localized/extended states by rejection sampling.

    Uniform draws are tried first; once ``budget // 2`` draws have been spent,
    localized candidates also come from noisy basis vectors.
    """
    if lo >= hi:
        raise ValidationError("need lo < hi")
    rng = _rng(rng)
    buckets = {1: [], 2: []}
    draws = 0
    while min(len(b) for b in buckets.values()) < n_per_class:
        if draws >= budget:
            short = [c for c, b in buckets.items() if len(b) < n_per_class]
            raise ValidationError(
                f"could not draw {n_per_class} states of class {short} within {budget} "
                f"draws; widen the thresholds or increase the budget")
        draws += 1
        if draws > budget // 2 and len(buckets[1]) < n_per_class and draws % 2:
            v = _localized_proposal(L, rng, nonnegative, noise=0.3)
        else:
            v = random_real_state(L, rng, nonnegative)
        label = int(ipr_labels(v, lo, hi)[0])
        if label and len(buckets[label]) < n_per_class:
            buckets[label].append(v)
    phi = np.array(buckets[1] + buckets[2])
    labels = np.repeat([1, 2], n_per_class)
    return phi, labels


def gen_ipr_task(L: int, N_TS: int, lo: float = 2.0, hi: float = 3.0, seed=None,
                 nonnegative: bool = True, budget: int = 100_000) -> IprTask:
    """``N_TS`` training states, half with IPR < lo and half with IPR > hi.

    States are nonnegative by default: a current-based classifier only sees
    ``psi psi^T``, and with random component signs the localization of a state
    is invisible to any quadratic form.
    """
    if N_TS < 2 or N_TS % 2:
        raise ValidationError("N_TS must be a positive even number")
    phi, labels = sample_ipr_states(N_TS // 2, L, lo, hi, seed, nonnegative, budget)
    params = {"L": L, "N_TS": N_TS, "nonnegative": nonnegative}
    if not isinstance(seed, np.random.Generator):
        params["seed"] = seed
    return IprTask(phi, labels, lo, hi, params)


@dataclass
class SubstrateTable:
    ids: list
    descriptors: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


def load_substrates(path, n_descriptors: int = 10) -> SubstrateTable:
    """Parse a CSV with header ``id,d1,...,d10,label``.

    Lines starting with ``#`` are skipped. Row numbers in errors are physical
    line numbers, so a bare header is row 1.
    """
    text = Path(path).read_text(encoding="utf-8")
    return _parse_substrates(text, n_descriptors)


def _parse_substrates(text: str, n_descriptors: int) -> SubstrateTable:
    # leading "#" lines carry metadata; row numbers still count them
    rows = list(enumerate(csv.reader(io.StringIO(text)), start=1))
    rows = [(n, r) for n, r in rows if not (r and r[0].lstrip().startswith("#"))]
    if not rows or not any(cell.strip() for cell in rows[0][1]):
        raise DataError("substrate file is empty")
    header_row, header = rows[0][0], [h.strip() for h in rows[0][1]]
    expected = ["id"] + [f"d{k}" for k in range(1, n_descriptors + 1)] + ["label"]
    missing = [h for h in expected if h not in header]
    if missing:
        raise DataError(f"missing column(s) {missing}", row=header_row)
    cols = [header.index(h) for h in expected]
    ids, X, y = [], [], []
    for lineno, row in rows[1:]:
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=lineno)
        cells = [row[c].strip() for c in cols]
        try:
            values = [float(v) for v in cells[1:-1]]
        except ValueError:
            raise DataError("non-numeric descriptor", row=lineno) from None
        if not all(np.isfinite(values)):
            raise DataError("non-finite descriptor", row=lineno)
        try:
            label = int(cells[-1])
        except ValueError:
            raise DataError(f"label {cells[-1]!r} is not an integer", row=lineno) from None
        if label not in SUBSTRATE_CLASSES:
            raise DataError(f"label {label} outside {sorted(SUBSTRATE_CLASSES)}", row=lineno)
        ids.append(cells[0])
        X.append(values)
        y.append(label)
    if not ids:
        raise DataError("substrate file has no data rows")
    return SubstrateTable(ids, np.array(X), np.array(y))


def substrates_to_csv(table: SubstrateTable, comment: str | None = None) -> str:
    k = table.descriptors.shape[1]
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"d{j}" for j in range(1, k + 1)] + ["label"])
    for sid, row, label in zip(table.ids, table.descriptors, table.labels):
        w.writerow([sid] + [repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def synthetic_substrates(n: int = 60, n_descriptors: int = 10, seed=0,
                         spread: float = 0.35) -> SubstrateTable:
    """Stand-in substrate data: three Gaussian clusters in descriptor space.

    Cluster centers differ in sign pattern as well as magnitude so that the
    classes remain distinct after unit normalization, where only the direction
    of a vector (up to sign) survives.
    """
    rng = _rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(3, n_descriptors))
    scales = rng.uniform(0.5, 5.0, size=n_descriptors)
    offsets = rng.uniform(-2.0, 2.0, size=n_descriptors)
    labels = np.resize(np.array([1, 2, 3]), n)
    rng.shuffle(labels)
    X = centers[labels - 1] + spread * rng.standard_normal((n, n_descriptors))
    X = X * scales + offsets
    ids = [f"S{k + 1:02d}" for k in range(n)]
    return SubstrateTable(ids, X, labels)


def normalize_features(table: SubstrateTable) -> LabeledStates:
    """Min-max scale each descriptor to [-1, 1], then normalize each row."""
    X = np.asarray(table.descriptors, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    const = np.flatnonzero(hi - lo <= 0)
    if const.size:
        raise DataError(f"descriptor column(s) {[f'd{j + 1}' for j in const]} are constant")
    scaled = 2.0 * (X - lo) / (hi - lo) - 1.0
    norms = np.linalg.norm(scaled, axis=1)
    if np.any(norms == 0):
        raise DataError("a substrate maps to the zero vector", row=int(np.argmin(norms)) + 2)
    return LabeledStates(scaled / norms[:, None], np.asarray(table.labels, dtype=int))


def split_train_validate(items: LabeledStates, n_train: int, n_val: int, seed=None):
    """Disjoint random training and validation subsets."""
    n = len(items)
    if n_train < 1 or n_val < 0 or n_train + n_val > n:
        raise ValidationError(f"cannot draw {n_train} + {n_val} items from {n}")
    perm = _rng(seed).permutation(n)
    tr, va = perm[:n_train], perm[n_train:n_train + n_val]
    train = TrainingSet(items.phi[tr], items.labels[tr])
    val = LabeledStates(items.phi[va], items.labels[va])
    return train, val
