"""Lindblad operators, the vectorized Liouvillian, and steady-state transport.

Everything here works in the vacuum-augmented single-excitation basis of
dimension ``D = N + 1``: index 0 is the vacuum, index ``k + 1`` is network
site ``k``. Density matrices are vectorized column-major (Fortran order), so
``vec(A X B) = (B.T kron A) vec(X)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import NonUniqueSteadyStateError, SolverError, ValidationError
from .network import NetworkSpec

__all__ = [
    "LindbladOp",
    "Liouvillian",
    "source_operator",
    "drain_operators",
    "dephasing_operators",
    "embed_hamiltonian",
    "build_liouvillian",
    "steady_state",
    "propagate",
    "exit_currents",
    "vec",
    "unvec",
    "density_to_json",
    "density_from_json",
]


@dataclass(frozen=True)
class LindbladOp:
    """A jump operator with its rate already folded in as a square root.

    ``kind`` is one of ``"source"``, ``"drain"``, ``"dephasing"``; ``site`` is the
    basis index the operator is attached to (``None`` for the source).
    """

    matrix: np.ndarray
    rate: float
    kind: str
    site: int | None = None


@dataclass(frozen=True)
class Liouvillian:
    superop: np.ndarray
    dim: int


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


def _check_rate(rate, name, allow_zero=False):
    rate = float(rate)
    if not np.isfinite(rate) or rate < 0 or (rate == 0 and not allow_zero):
        bound = "nonnegative" if allow_zero else "positive"
        raise ValidationError(f"{name} must be {bound}, got {rate}")
    return rate


def source_operator(psi, gamma_in: float, dim: int | None = None) -> LindbladOp:
    """Injection operator ``sqrt(gamma_in) * sum_i psi_i |i><vac|``.

    Entry site ``i`` (0-based) lives at basis index ``i + 1``. ``dim`` defaults
    to the smallest basis that holds the entry layer.
    """
    psi = np.asarray(psi, dtype=float).ravel()
    gamma_in = _check_rate(gamma_in, "gamma_in")
    if psi.size == 0 or abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValidationError("source state must be normalized to 1")
    dim = psi.size + 1 if dim is None else int(dim)
    if dim < psi.size + 1:
        raise ValidationError("basis too small for the source state")
    V = np.zeros((dim, dim), dtype=complex)
    V[1: psi.size + 1, 0] = np.sqrt(gamma_in) * psi
    return LindbladOp(V, gamma_in, "source")


def drain_operators(spec: NetworkSpec, gamma: float) -> list[LindbladOp]:
    """One extraction operator ``sqrt(gamma) |vac><r|`` per exit site."""
    gamma = _check_rate(gamma, "gamma")
    ops = []
    for site in spec.exit_sites + 1:
        V = np.zeros((spec.dim, spec.dim), dtype=complex)
        V[0, site] = np.sqrt(gamma)
        ops.append(LindbladOp(V, gamma, "drain", int(site)))
    return ops


def dephasing_operators(spec: NetworkSpec, Gamma: float) -> list[LindbladOp]:
    """Local dephasing ``sqrt(Gamma) |i><i|`` on every network site.

    Returns an empty list for ``Gamma == 0``.
    """
    Gamma = _check_rate(Gamma, "Gamma", allow_zero=True)
    if Gamma == 0:
        return []
    ops = []
    for site in range(1, spec.dim):
        V = np.zeros((spec.dim, spec.dim), dtype=complex)
        V[site, site] = np.sqrt(Gamma)
        ops.append(LindbladOp(V, Gamma, "dephasing", site))
    return ops


def embed_hamiltonian(H: np.ndarray) -> np.ndarray:
    """Place an N x N site Hamiltonian in the (N+1)-dimensional basis."""
    H = np.asarray(H)
    n = H.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=complex)
    out[1:, 1:] = H
    return out


def build_liouvillian(H: np.ndarray, ops) -> Liouvillian:
    """Column-major superoperator of ``-i[H, rho] + sum_k D[V_k] rho``."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError("Hamiltonian must be square")
    d = H.shape[0]
    eye = np.eye(d)
    S = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for op in ops:
        V = np.asarray(op.matrix if isinstance(op, LindbladOp) else op, dtype=complex)
        if V.shape != (d, d):
            raise ValidationError(f"Lindblad operator of shape {V.shape} does not match "
                                  f"Hamiltonian dimension {d}")
        VdV = V.conj().T @ V
        S += np.kron(V.conj(), V) - 0.5 * (np.kron(eye, VdV) + np.kron(VdV.T, eye))
    return Liouvillian(S, d)


def steady_state(Lv: Liouvillian, null_tol: float = 1e-8,
                 residual_tol: float = 1e-10) -> np.ndarray:
    """Unique trace-one fixed point of the Liouvillian.

    Solves ``[L; vec(I)^H] x = [0; 1]`` by least squares. Uniqueness is checked
    through the second-smallest singular value of ``L``.
    """
    A = Lv.superop
    d = Lv.dim
    s = np.linalg.svd(A, compute_uv=False)
    scale = s[0] if s[0] > 0 else 1.0
    if d > 1 and s[-2] <= null_tol * scale:
        n_null = int(np.sum(s <= null_tol * scale))
        raise NonUniqueSteadyStateError(
            f"Liouvillian null space has dimension {n_null} at tolerance {null_tol:g}")
    trace_row = vec(np.eye(d)).conj()[None, :]
    aug = np.vstack([A, trace_row])
    rhs = np.zeros(aug.shape[0], dtype=complex)
    rhs[-1] = 1.0
    x, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    rho = unvec(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    residual = np.linalg.norm(A @ vec(rho))
    if residual > residual_tol * scale:
        raise SolverError(f"steady-state residual {residual:.3e} exceeds "
                          f"{residual_tol:g} * ||L|| = {residual_tol * scale:.3e}")
    return rho


def propagate(rho0: np.ndarray, Lv: Liouvillian, t_final: float, dt: float,
              trace_tol: float = 1e-6) -> np.ndarray:
    """Integrate ``d vec(rho)/dt = L vec(rho)`` with classical RK4.

    The step count is ``ceil(t_final / dt)``; the last step is shortened to land
    exactly on ``t_final``.
    """
    if dt <= 0 or t_final < dt:
        raise ValidationError("need dt > 0 and t_final >= dt")
    A = Lv.superop
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (Lv.dim, Lv.dim):
        raise ValidationError("initial state does not match the Liouvillian dimension")
    y = vec(rho0).copy()
    tr0 = np.trace(rho0).real
    n_steps = int(np.ceil(t_final / dt - 1e-12))
    h = t_final / n_steps
    for step in range(n_steps):
        k1 = A @ y
        k2 = A @ (y + 0.5 * h * k1)
        k3 = A @ (y + 0.5 * h * k2)
        k4 = A @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if step % 64 == 0 or step == n_steps - 1:
            drift = abs(np.trace(unvec(y, Lv.dim)).real - tr0)
            if not np.isfinite(drift) or drift > trace_tol:
                raise SolverError(f"trace drift {drift:.3e} at t={h * (step + 1):.4g}; "
                                  "use a smaller dt")
    return unvec(y, Lv.dim)


def _dissipator(V: np.ndarray, rho: np.ndarray) -> np.ndarray:
    VdV = V.conj().T @ V
    return V @ rho @ V.conj().T - 0.5 * (VdV @ rho + rho @ VdV)


def exit_currents(rho_s: np.ndarray, drains) -> np.ndarray:
    """Outflow through each drain, ``J_r = -Tr(n_r D_r[rho])``.

    For ``V = sqrt(gamma)|vac><r|`` this is ``gamma * rho[r, r]``.
    """
    rho_s = np.asarray(rho_s, dtype=complex)
    J = np.empty(len(drains))
    for k, op in enumerate(drains):
        n_r = np.zeros(rho_s.shape)
        n_r[op.site, op.site] = 1.0
        J[k] = -np.trace(n_r @ _dissipator(op.matrix, rho_s)).real
    return J


def density_to_json(rho: np.ndarray) -> str:
    rho = np.asarray(rho, dtype=complex)
    return json.dumps({"real": rho.real.tolist(), "imag": rho.imag.tolist()})


def density_from_json(text: str) -> np.ndarray:
    d = json.loads(text)
    return np.asarray(d["real"], dtype=float) + 1j * np.asarray(d["imag"], dtype=float)
