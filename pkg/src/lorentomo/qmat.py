"""Dense complex-matrix algebra for qudit states.

Density matrices are plain ``(s, s)`` complex numpy arrays whose trace is the
intensity (it need not equal one).  A purification is an ``(s, r)`` amplitude
matrix ``psi`` with ``rho = psi @ psi.conj().T``; right-multiplying ``psi`` by
any ``r x r`` unitary leaves ``rho`` unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import unitary_group

from .errors import DimensionMismatch, InvalidArgs, InvalidWeight, RankTooSmall

HERMITIAN_ATOL = 1e-12
RANK_RTOL = 1e-12


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def is_density(rho: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    """True if ``rho`` is Hermitian, positive semidefinite and has positive trace."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] < 2:
        return False
    tr = np.trace(rho).real
    if not tr > 0:
        return False
    if np.max(np.abs(rho - dagger(rho))) > atol * tr:
        return False
    return np.linalg.eigvalsh(rho)[0] >= -atol * tr


def density_of(psi: np.ndarray) -> np.ndarray:
    """Density matrix ``psi psi^+`` of an amplitude matrix (a column vector is rank 1)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    return psi @ dagger(psi)


def eigh_descending(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a Hermitian matrix ordered by descending eigenvalue.

    Ties keep the order returned by LAPACK (stable sort), so degenerate
    eigenvalues are assigned by index.
    """
    w, v = np.linalg.eigh(rho)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def numerical_rank(rho: np.ndarray, rtol: float = RANK_RTOL) -> int:
    w = np.linalg.eigvalsh(rho)
    return int(np.sum(w > rtol * np.trace(rho).real))


def purify(rho: np.ndarray, r: int) -> np.ndarray:
    """Amplitude matrix of shape ``(s, r)`` built from the ``r`` largest eigenpairs.

    Column ``i`` is ``sqrt(w_i) v_i`` with eigenvalues in descending order.
    Raises RankTooSmall if ``rho`` has more than ``r`` non-negligible eigenvalues.
    """
    rho = np.asarray(rho, dtype=complex)
    s = rho.shape[0]
    if not 1 <= r <= s:
        raise RankTooSmall(f"rank {r} outside [1, {s}]")
    w, v = eigh_descending(rho)
    rank = int(np.sum(w > RANK_RTOL * np.trace(rho).real))
    if r < rank:
        raise RankTooSmall(f"requested rank {r} < numerical rank {rank}")
    w = np.clip(w[:r], 0.0, None)
    return v[:, :r] * np.sqrt(w)


def psd_sqrt(rho: np.ndarray) -> np.ndarray:
    # eigenvalues within rounding of zero may come out slightly negative
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ dagger(v)


def fidelity(rho: np.ndarray, rho0: np.ndarray) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) rho0 sqrt(rho)))^2`` of unit-trace states.

    Evaluated as the squared trace norm of ``sqrt(rho) sqrt(rho0)``, which is
    the same quantity but keeps full absolute precision in the small singular
    values.  Losses ``1 - F`` down to ~1e-12 are therefore resolved, which the
    near-pure experiments need.  Callers must normalize both traces.
    """
    rho = np.asarray(rho, dtype=complex)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho.shape != rho0.shape:
        raise DimensionMismatch(f"{rho.shape} vs {rho0.shape}")
    sv = np.linalg.svd(psd_sqrt(rho) @ psd_sqrt(rho0), compute_uv=False)
    return float(np.sum(sv) ** 2)


def normalize(rho: np.ndarray) -> np.ndarray:
    return rho / np.trace(rho).real


def spectrum(s: int, r: int, weight: float) -> np.ndarray:
    """Eigenvalues ``(weight, rest, ..., rest)`` of length ``r`` summing to one."""
    if not (1.0 / s < weight <= 1.0):
        raise InvalidWeight(f"dominant weight {weight} outside (1/{s}, 1]")
    if r == 1:
        if weight != 1.0:
            raise InvalidWeight("a rank-1 state must have dominant weight 1")
        return np.array([1.0])
    rest = (1.0 - weight) / (r - 1)
    return np.array([weight] + [rest] * (r - 1))


@dataclass(frozen=True)
class StateGenConfig:
    dim: int
    rank: int
    dominant_weight: float
    seed: int

    def __post_init__(self):
        if self.dim < 2:
            raise InvalidArgs(f"dimension {self.dim} < 2")
        if not 1 <= self.rank <= self.dim:
            raise RankTooSmall(f"rank {self.rank} outside [1, {self.dim}]")
        spectrum(self.dim, self.rank, self.dominant_weight)


def random_mixed_state(cfg: StateGenConfig) -> np.ndarray:
    """Unit-trace rank-``r`` state with Haar-random eigenvectors.

    The spectrum is ``(w, (1-w)/(r-1), ...)``.  Deterministic in ``cfg.seed``.
    """
    lam = spectrum(cfg.dim, cfg.rank, cfg.dominant_weight)
    rng = np.random.default_rng(cfg.seed)
    u = unitary_group.rvs(cfg.dim, random_state=rng)
    v = u[:, : cfg.rank]
    return (v * lam) @ dagger(v)


def regularize_spectrum(rho: np.ndarray, weight: float) -> np.ndarray:
    """Replace the eigenvalues of ``rho`` by ``(weight, (1-weight)/(s-1), ...)``.

    Eigenvectors are kept and matched in descending order of the original
    eigenvalues, so the output commutes with ``rho`` and has full rank.
    """
    rho = np.asarray(rho, dtype=complex)
    s = rho.shape[0]
    lam = spectrum(s, s, weight)
    _, v = eigh_descending(rho)
    out = (v * lam) @ dagger(v)
    return (out + dagger(out)) / 2


def random_hermitian(s: int, seed) -> np.ndarray:
    """``(A + A^+)/2`` for ``A`` with i.i.d. standard complex normal entries (E|a|^2 = 1)."""
    rng = np.random.default_rng(seed)
    a = (rng.standard_normal((s, s)) + 1j * rng.standard_normal((s, s))) / np.sqrt(2)
    return (a + dagger(a)) / 2
