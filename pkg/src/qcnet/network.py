"""Layered network topology and the single-particle tight-binding Hamiltonian.

Sites are indexed 0..N-1 in the order entry layer, hidden layer, exit layer.
The flat parameter vector uses a fixed layout:

1. entry-hidden couplings, row-major over (entry i, hidden j)
2. hidden-hidden couplings, upper triangle in ``numpy.triu_indices`` order
3. hidden-exit couplings, row-major over (hidden j, exit r)
4. on-site energies for all N sites (only when ``train_onsite`` is set)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import MaskViolationError, ValidationError

__all__ = [
    "NetworkSpec",
    "build_topology",
    "assemble_hamiltonian",
    "extract_params",
    "coupling_mask",
    "mean_hopping",
    "spec_to_dict",
    "spec_from_dict",
    "dump_model",
    "load_model",
]


@dataclass(frozen=True)
class NetworkSpec:
    """Dimensions and parameter layout of an L-M-N_c transport network."""

    n_in: int
    n_hidden: int
    n_out: int
    train_onsite: bool = False
    param_bound: float = 1.0

    def __post_init__(self):
        for name in ("n_in", "n_hidden", "n_out"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ValidationError(f"{name} must be an integer, got {value!r}")
        if self.n_in < 1 or self.n_hidden < 1:
            raise ValidationError("n_in and n_hidden must be >= 1")
        if self.n_out < 2:
            raise ValidationError("n_out must be >= 2")
        if not np.isfinite(self.param_bound) or self.param_bound <= 0:
            raise ValidationError("param_bound must be a positive finite number")

    @property
    def n_sites(self) -> int:
        return self.n_in + self.n_hidden + self.n_out

    @property
    def dim(self) -> int:
        """Hilbert dimension including the vacuum state at index 0."""
        return self.n_sites + 1

    @property
    def entry_sites(self) -> np.ndarray:
        return np.arange(self.n_in)

    @property
    def hidden_sites(self) -> np.ndarray:
        return np.arange(self.n_in, self.n_in + self.n_hidden)

    @property
    def exit_sites(self) -> np.ndarray:
        return np.arange(self.n_in + self.n_hidden, self.n_sites)

    @property
    def n_hopping(self) -> int:
        L, M, C = self.n_in, self.n_hidden, self.n_out
        return L * M + M * (M - 1) // 2 + M * C

    @property
    def n_params(self) -> int:
        return self.n_hopping + (self.n_sites if self.train_onsite else 0)

    @cached_property
    def _index(self) -> tuple[np.ndarray, np.ndarray]:
        # (rows, cols) in the site basis, one pair per hopping parameter
        hid, ent, ext = self.hidden_sites, self.entry_sites, self.exit_sites
        r1, c1 = np.meshgrid(ent, hid, indexing="ij")
        iu, ju = np.triu_indices(self.n_hidden, 1)
        r3, c3 = np.meshgrid(hid, ext, indexing="ij")
        rows = np.concatenate([r1.ravel(), hid[iu], r3.ravel()])
        cols = np.concatenate([c1.ravel(), hid[ju], c3.ravel()])
        return rows, cols

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        b = np.full(self.n_params, float(self.param_bound))
        return -b, b


def build_topology(L, M, N_c, train_onsite=False, t_max=1.0) -> NetworkSpec:
    """Create the spec of an ``L``-``M``-``N_c`` network."""
    return NetworkSpec(_as_count(L), _as_count(M), _as_count(N_c), bool(train_onsite),
                       float(t_max))


def _as_count(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    return x


def coupling_mask(spec: NetworkSpec) -> np.ndarray:
    """Boolean N x N matrix of positions allowed to be nonzero (diagonal included
    only when on-site energies are trained)."""
    mask = np.zeros((spec.n_sites, spec.n_sites), dtype=bool)
    rows, cols = spec._index
    mask[rows, cols] = True
    mask[cols, rows] = True
    if spec.train_onsite:
        np.fill_diagonal(mask, True)
    return mask


def _check_params(spec: NetworkSpec, params) -> np.ndarray:
    p = np.asarray(params, dtype=float)
    if p.ndim != 1 or p.size != spec.n_params:
        raise ValidationError(
            f"expected {spec.n_params} parameters, got shape {np.shape(params)}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("parameters must be finite")
    if np.any(np.abs(p) > spec.param_bound):
        raise ValidationError(f"parameters outside [-{spec.param_bound}, {spec.param_bound}]")
    return p


def assemble_hamiltonian(spec: NetworkSpec, params) -> np.ndarray:
    """Real symmetric N x N single-particle Hamiltonian from a parameter vector."""
    p = _check_params(spec, params)
    H = np.zeros((spec.n_sites, spec.n_sites))
    rows, cols = spec._index
    hop = p[: spec.n_hopping]
    H[rows, cols] = hop
    H[cols, rows] = hop
    if spec.train_onsite:
        H[np.diag_indices(spec.n_sites)] = p[spec.n_hopping:]
    return H


def extract_params(spec: NetworkSpec, H, atol=0.0) -> np.ndarray:
    """Inverse of :func:`assemble_hamiltonian`.

    Raises MaskViolationError if ``H`` has a nonzero entry outside the mask
    (magnitude above ``atol``) or is not symmetric.
    """
    H = np.asarray(H)
    n = spec.n_sites
    if H.shape != (n, n):
        raise ValidationError(f"expected a {n}x{n} matrix, got {H.shape}")
    if np.iscomplexobj(H):
        if np.any(np.abs(H.imag) > atol):
            raise ValidationError("complex hopping amplitudes are not supported")
        H = H.real
    if np.any(np.abs(H - H.T) > atol):
        raise MaskViolationError("Hamiltonian is not symmetric")
    outside = np.abs(H[~coupling_mask(spec)]) > atol
    if np.any(outside):
        i, j = np.argwhere((np.abs(H) > atol) & ~coupling_mask(spec))[0]
        raise MaskViolationError(f"nonzero coupling between sites {i} and {j} is not allowed")
    rows, cols = spec._index
    p = H[rows, cols]
    if spec.train_onsite:
        p = np.concatenate([p, np.diag(H)])
    return p.astype(float)


def mean_hopping(spec: NetworkSpec, params) -> float:
    """Mean absolute hopping amplitude, the energy unit for dephasing rates."""
    p = np.asarray(params, dtype=float)[: spec.n_hopping]
    return float(np.mean(np.abs(p)))


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {"L": spec.n_in, "M": spec.n_hidden, "Nc": spec.n_out,
            "train_onsite": spec.train_onsite, "t_max": spec.param_bound}


def spec_from_dict(d: dict) -> NetworkSpec:
    try:
        return build_topology(d["L"], d["M"], d["Nc"], d.get("train_onsite", False),
                              d.get("t_max", 1.0))
    except KeyError as exc:
        raise ValidationError(f"network spec is missing field {exc.args[0]!r}") from None


def dump_model(spec: NetworkSpec, params, **extra) -> str:
    """Serialize a network and its parameters as JSON.

    Python's float repr is shortest-round-trip, so loading gives back the
    identical parameter vector.
    """
    payload = {"spec": spec_to_dict(spec),
               "params": [float(x) for x in _check_params(spec, params)]}
    payload.update(extra)
    return json.dumps(payload, indent=2)


def load_model(text: str) -> tuple[NetworkSpec, np.ndarray, dict]:
    payload = json.loads(text)
    spec = spec_from_dict(payload["spec"])
    params = _check_params(spec, payload["params"])
    extra = {k: v for k, v in payload.items() if k not in ("spec", "params")}
    return spec, params, extra

