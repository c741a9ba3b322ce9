"""Fast steady-state exit currents for many source states on one network.

With source ``sqrt(gamma_in) sum_i psi_i |i><vac|`` and drains
``sqrt(gamma) |vac><r|``, the site block of the steady state is
``rho_S = gamma_in * rho_vac * X`` where ``X`` solves the site-space equation
``L_S(X) = -psi psi^T``::

    L_S(X) = K X + X K^H + Gamma_dep * (diag(X) - X)     (dephasing term folded
    K = -i H - (gamma / 2) P_exit                          into K below)

Every exit population ``X_rr`` is therefore a quadratic form in ``psi``:
``X_rr = psi^T Y_r psi`` with ``L_S^dagger(Y_r) = -|r><r|``. Solving the
adjoint problem once per exit site gives the currents for any number of
inputs by a single ``einsum``. Vacuum-site coherences vanish at the steady
state, and ``rho_vac = 1 / (1 + gamma_in psi^T Y_tr psi)`` by the trace
condition, where ``L_S^dagger(Y_tr) = -I``.

The normalized currents ``gamma * X_rr`` sum to one for every unit ``psi``
(current conservation), which is checked after each solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import ztrsyl

from .exceptions import DegenerateNetworkError, ValidationError
from .network import NetworkSpec, assemble_hamiltonian

__all__ = ["Rates", "CurrentForms", "current_forms", "network_currents"]


@dataclass(frozen=True)
class Rates:
    """Injection, extraction and dephasing rates (units of the hopping scale)."""

    gamma_in: float = 1.0
    gamma: float = 1.0
    dephasing: float = 0.0

    def __post_init__(self):
        if not (self.gamma_in > 0 and self.gamma > 0):
            raise ValidationError("gamma_in and gamma must be positive")
        if not self.dephasing >= 0:
            raise ValidationError("dephasing rate must be nonnegative")


@dataclass(frozen=True)
class CurrentForms:
    """Quadratic forms on the entry layer.

    ``exit_forms[r]`` maps a unit input to its normalized exit current at
    drain ``r``; ``trace_form`` gives ``Tr X`` and thereby the vacuum weight.
    """

    exit_forms: np.ndarray  # (N_c, L, L)
    trace_form: np.ndarray  # (L, L)
    gamma_in: float

    def normalized(self, Psi: np.ndarray) -> np.ndarray:
        Psi = np.atleast_2d(Psi)
        return np.einsum("rij,ni,nj->nr", self.exit_forms, Psi, Psi)

    def vacuum_weight(self, Psi: np.ndarray) -> np.ndarray:
        Psi = np.atleast_2d(Psi)
        tr = np.einsum("ij,ni,nj->n", self.trace_form, Psi, Psi)
        return 1.0 / (1.0 + self.gamma_in * tr)

    def currents(self, Psi: np.ndarray) -> np.ndarray:
        """Absolute exit currents ``J_r`` for each row of ``Psi``."""
        Psi = np.atleast_2d(Psi)
        return (self.gamma_in * self.vacuum_weight(Psi))[:, None] * self.normalized(Psi)


def _rhs(spec: NetworkSpec) -> np.ndarray:
    n = spec.n_sites
    rhs = np.zeros((spec.n_out + 1, n, n), dtype=complex)
    for k, site in enumerate(spec.exit_sites):
        rhs[k, site, site] = -1.0
    rhs[-1] = -np.eye(n)
    return rhs


def _solve_lyapunov(K: np.ndarray, rhs: np.ndarray, dark_tol: float) -> np.ndarray:
    # K^H Y + Y K = C via one complex Schur form K = Q T Q^H
    T, Q = scipy.linalg.schur(K, output="complex")
    decay = -np.diag(T).real
    if decay.min() <= dark_tol:
        raise DegenerateNetworkError(
            f"network has a mode decoupled from every drain (decay rate {decay.min():.2e})")
    out = np.empty_like(rhs)
    Qh = Q.conj().T
    for k, C in enumerate(rhs):
        Ct = Qh @ C @ Q
        Yt, scale, info = ztrsyl(T, T, Ct, trana="C", tranb="N", isgn=1)
        if info < 0:
            raise ValidationError(f"ztrsyl argument {-info} invalid")
        if info == 1 or not np.all(np.isfinite(Yt)):
            raise DegenerateNetworkError("Lyapunov equation is numerically singular")
        out[k] = Q @ (Yt / scale) @ Qh
    return out


def _solve_dense(K: np.ndarray, dephasing: float, rhs: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    eye = np.eye(n)
    Kd = K - 0.5 * dephasing * eye
    # column-major vec: vec(A Y) = (I kron A) vec(Y), vec(Y B) = (B^T kron I) vec(Y)
    A = np.kron(eye, Kd.conj().T) + np.kron(Kd.T, eye)
    diag_idx = np.arange(n) * (n + 1)
    A[diag_idx, diag_idx] += dephasing
    B = np.stack([C.reshape(-1, order="F") for C in rhs], axis=1)
    try:
        sol = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise DegenerateNetworkError("dephased transport equation is singular") from exc
    if not np.all(np.isfinite(sol)) or np.linalg.norm(A @ sol - B) > 1e-8 * np.linalg.norm(B):
        raise DegenerateNetworkError("dephased transport equation is numerically singular")
    return np.stack([sol[:, k].reshape(n, n, order="F") for k in range(sol.shape[1])])


def current_forms(spec: NetworkSpec, H: np.ndarray, rates: Rates = Rates(),
                  dark_tol: float = 1e-10, conservation_tol: float = 1e-6) -> CurrentForms:
    """Quadratic forms giving steady-state exit currents of ``H`` for any input."""
    H = np.asarray(H, dtype=float)
    n = spec.n_sites
    if H.shape != (n, n):
        raise ValidationError(f"expected a {n}x{n} Hamiltonian, got {H.shape}")
    K = -1j * H
    K[spec.exit_sites, spec.exit_sites] -= 0.5 * rates.gamma
    rhs = _rhs(spec)
    if rates.dephasing > 0:
        Y = _solve_dense(K, rates.dephasing, rhs)
    else:
        scale = rates.gamma + np.abs(H).sum(axis=1).max()
        Y = _solve_lyapunov(K, rhs, dark_tol * scale)
    L = spec.n_in
    block = Y[:, :L, :L]
    block = 0.5 * (block + block.conj().transpose(0, 2, 1))
    exit_forms = rates.gamma * block[:-1].real
    total = exit_forms.sum(axis=0)
    if np.abs(total - np.eye(L)).max() > conservation_tol:
        raise DegenerateNetworkError(
            "exit currents do not conserve the injected current; the transport problem "
            "is too ill-conditioned")
    return CurrentForms(exit_forms, block[-1].real, rates.gamma_in)


def network_currents(spec: NetworkSpec, params, Psi, rates: Rates = Rates()) -> np.ndarray:
    """Absolute exit currents for each row of ``Psi`` (shape ``(n, N_c)``)."""
    forms = current_forms(spec, assemble_hamiltonian(spec, params), rates)
    return forms.currents(np.asarray(Psi, dtype=float))
