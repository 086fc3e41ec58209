"""Qubit polarization states as Minkowski four-vectors.

A qubit density matrix ``rho = (P0 I + P.sigma) / 2`` is identified with the
four-vector ``(P0, P1, P2, P3)``: intensity plus Stokes vector.  Any 2x2
``L`` with ``det L = 1`` acts as ``rho -> L rho L^+`` and preserves the
interval ``P0^2 - |P|^2 = 4 det rho``; Hermitian ``L`` are boosts.

Polarizer convention: ``|V> = (1, 0)``, ``|H> = (0, 1)``.  A measurement
"in basis U" rotates the photon by ``U`` and counts V and H transmissions.
Time is measured in units of the detector registration interval.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, PureStateNoRestFrame, UnphysicalVector

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
I2 = np.eye(2, dtype=complex)

U1 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
U2 = np.array([[1, -1j], [1, 1j]], dtype=complex) / np.sqrt(2)
U3 = I2.copy()
POLARIMETER_BASES = {"U1": U1, "U2": U2, "U3": U3}

PURE_DET_RTOL = 1e-14


@dataclass(frozen=True)
class StokesFourVector:
    p0: float
    p1: float
    p2: float
    p3: float

    @property
    def spatial(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3])

    @property
    def interval2(self) -> float:
        return self.p0**2 - float(self.spatial @ self.spatial)

    @property
    def velocity(self) -> np.ndarray:
        return self.spatial / self.p0


@dataclass(frozen=True)
class BoostParams:
    direction: tuple[float, float, float]
    rapidity: float

    def __post_init__(self):
        n = np.asarray(self.direction, dtype=float)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError(f"boost direction must be a unit 3-vector, got {self.direction}")

    @property
    def speed(self) -> float:
        return float(np.tanh(abs(self.rapidity)))


def _check_qubit(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise DimensionMismatch(f"expected a 2x2 density matrix, got shape {rho.shape}")
    return rho


def stokes_of(rho: np.ndarray) -> StokesFourVector:
    rho = _check_qubit(rho)
    p = [np.trace(rho).real] + [np.trace(rho @ s).real for s in SIGMA]
    return StokesFourVector(*map(float, p))


def density_of_stokes(p: StokesFourVector, rtol: float = 1e-12) -> np.ndarray:
    norm = float(np.linalg.norm(p.spatial))
    if p.p0 < norm - rtol * abs(p.p0):
        raise UnphysicalVector(f"|P| = {norm} exceeds P0 = {p.p0}")
    return 0.5 * np.array(
        [
            [p.p0 + p.p3, p.p1 - 1j * p.p2],
            [p.p1 + 1j * p.p2, p.p0 - p.p3],
        ]
    )


def interval2(rho: np.ndarray) -> float:
    """Squared relativistic interval ``P0^2 - |P|^2``, computed as ``4 det rho``."""
    rho = _check_qubit(rho)
    return float(4.0 * np.linalg.det(rho).real)


def boost(b: BoostParams) -> np.ndarray:
    """``cosh(theta/2) I - sinh(theta/2) n.sigma``: Hermitian, unit determinant."""
    n = np.asarray(b.direction, dtype=float)
    ns = np.tensordot(n, SIGMA, axes=1)
    half = b.rapidity / 2
    return np.cosh(half) * I2 - np.sinh(half) * ns


def rest_frame_boost(rho: np.ndarray) -> BoostParams:
    """Boost that moves a mixed qubit to the centre of the Bloch ball.

    Pure states (``det rho`` below ``1e-14 Tr(rho)^2``) have no rest frame.
    """
    rho = _check_qubit(rho)
    p = stokes_of(rho)
    if np.linalg.det(rho).real <= PURE_DET_RTOL * p.p0**2:
        raise PureStateNoRestFrame("pure states cannot be boosted to the Bloch centre")
    v = p.velocity
    speed = float(np.linalg.norm(v))
    if speed == 0.0:
        return BoostParams((0.0, 0.0, 1.0), 0.0)
    return BoostParams(tuple(v / speed), float(np.arctanh(speed)))


def lorentz_apply(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return L @ rho @ L.conj().T


def polarimeter_counts(rho: np.ndarray, basis: str, duration: float, seed) -> tuple[int, int]:
    """Photon counts ``(N_V, N_H)`` after rotating by the named basis unitary.

    Each polarizer setting collects an independent Poisson number of photons
    with mean ``duration * <V|U rho U^+|V>`` (resp. ``H``).  Then
    ``(N_V + N_H)/duration`` estimates ``P0`` and ``(N_V - N_H)/duration``
    estimates the Stokes component selected by the basis (U1 -> P1,
    U2 -> P2, U3 -> P3).
    """
    rho = _check_qubit(rho)
    if duration <= 0:
        raise ValueError("duration must be positive")
    u = POLARIMETER_BASES[basis]
    rotated = u @ rho @ u.conj().T
    means = duration * np.clip(np.diag(rotated).real, 0.0, None)
    rng = np.random.default_rng(seed)
    n_v, n_h = rng.poisson(means)
    return int(n_v), int(n_h)
