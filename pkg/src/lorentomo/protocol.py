"""Measurement protocols: instrumental matrices, MUB sets and Lorentz transforms.

A protocol is a list of bra-vectors (rows) ``X_j`` with exposure weights
``t_j``.  Row ``j`` measures the rank-one operator ``Lambda_j = X_j^+ X_j``
and registers events at rate ``t_j Tr(Lambda_j rho)``.  Rows are always
stored with unit norm; any norm picked up from a transformation is folded
into the weight, so ``|phi_j><phi_j|`` is directly available.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularState, UnsupportedDimension, ZeroRate
from .qmat import dagger, psd_sqrt

COND_LIMIT = 1e12

# primitive polynomials over GF(2) as bitmasks, indexed by degree
_GF2_POLY = {1: 0b11, 2: 0b111, 3: 0b1011, 4: 0b10011, 5: 0b100101, 6: 0b1000011}


@dataclass(frozen=True)
class InstrumentalMatrix:
    rows: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=complex))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != rows.shape[0]:
            raise DimensionMismatch(f"{rows.shape[0]} rows but {weights.shape[0]} weights")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("exposure weights must be finite and non-negative")
        rows.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    def row_norms2(self) -> np.ndarray:
        return np.sum(np.abs(self.rows) ** 2, axis=1)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rows": [[[float(z.real), float(z.imag)] for z in row] for row in self.rows],
            "weights": [float(t) for t in self.weights],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InstrumentalMatrix":
        rows = np.array([[complex(re, im) for re, im in row] for row in doc["rows"]])
        if rows.ndim != 2 or rows.shape[1] != doc["dim"]:
            raise DimensionMismatch(f"rows do not have length dim = {doc['dim']}")
        return cls(rows, np.array(doc["weights"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "InstrumentalMatrix":
        return cls.from_dict(json.loads(text))


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % k for k in range(2, int(n**0.5) + 1))


def _gf2_mul(a: int, b: int, m: int) -> int:
    poly = _GF2_POLY[m]
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a >> m:
            a ^= poly
    return out


def _gf2_trace(a: int, m: int) -> int:
    t, x = 0, a
    for _ in range(m):
        t ^= x
        x = _gf2_mul(x, x, m)
    # the trace lies in the prime field {0, 1}
    return t & 1


def _binary_mub_phases(m: int) -> list[np.ndarray]:
    """Symmetric binary matrices ``M_g[i, j] = tr(g x^i x^j)`` for every field element ``g``.

    Pairwise differences are nonsingular, which makes the quadratic-phase
    bases below mutually unbiased.
    """
    d = 1 << m
    mats = []
    for g in range(d):
        mat = np.zeros((m, m), dtype=np.int64)
        for i in range(m):
            for j in range(m):
                mat[i, j] = _gf2_trace(_gf2_mul(g, _gf2_pow_x(i + j, m), m), m)
        mats.append(mat)
    return mats


def _gf2_pow_x(k: int, m: int) -> int:
    out = 1
    for _ in range(k):
        out = _gf2_mul(out, 0b10, m)
    return out


def _mub_kets(s: int) -> list[np.ndarray]:
    """Complete set of ``s + 1`` MUBs; each entry has the basis kets as columns."""
    bases = [np.eye(s, dtype=complex)]
    if _is_prime(s) and s > 2:
        k = np.arange(s)
        omega = np.exp(2j * np.pi / s)
        for a in range(s):
            cols = [omega ** ((a * k * k + b * k) % s) for b in range(s)]
            bases.append(np.array(cols).T / np.sqrt(s))
        return bases
    m = s.bit_length() - 1
    if s == 1 << m and m in _GF2_POLY:
        bits = (np.arange(s)[:, None] >> np.arange(m)[None, :]) & 1
        for mat in _binary_mub_phases(m):
            quad = np.einsum("xi,ij,xj->x", bits, mat, bits) % 4
            cols = [1j**quad * (-1.0) ** ((bits @ bits[b]) % 2) for b in range(s)]
            bases.append(np.array(cols).T / np.sqrt(s))
        return bases
    raise UnsupportedDimension(f"no MUB construction for dimension {s}")


def mub_protocol(s: int) -> InstrumentalMatrix:
    """``s (s + 1)`` unit-weight rows from a complete set of mutually unbiased bases.

    Supported: every prime ``s`` and ``s = 2^m`` with ``m <= 6``.  Rows are
    basis-major.  Basis 0 is the computational basis; for prime ``p > 2``
    basis ``a + 1`` has kets ``omega^(a k^2 + b k) / sqrt(p)``, and for
    ``s = 2^m`` it has kets ``i^(x.M_a.x) (-1)^(b.x) / sqrt(s)`` over the bit
    vectors ``x``.  For ``s = 2`` the three bases are the eigenbases of
    sigma_3, sigma_1 and sigma_2, and the rows coincide with the rows of the
    polarimeter rotations ``U3``, ``U1``, ``U2``.
    """
    if s < 2:
        raise UnsupportedDimension(f"dimension {s} < 2")
    kets = _mub_kets(s)
    rows = np.concatenate([dagger(b) for b in kets], axis=0)
    return InstrumentalMatrix(rows, np.ones(rows.shape[0]))


def measurement_operators(X: InstrumentalMatrix) -> np.ndarray:
    """Stack of rank-one operators ``Lambda_j = X_j^+ X_j``, shape ``(m, s, s)``."""
    return np.einsum("ja,jb->jab", X.rows.conj(), X.rows)


def weighted_sum(X: InstrumentalMatrix) -> np.ndarray:
    """``sum_j t_j Lambda_j``."""
    return np.einsum("j,ja,jb->ab", X.weights, X.rows.conj(), X.rows)


def povm_defect(X: InstrumentalMatrix) -> float:
    """Largest entry of ``sum_j t_j Lambda_j - c I`` with ``c`` its mean diagonal.

    Zero (to rounding) iff the weighted operators resolve a multiple of the identity.
    """
    total = weighted_sum(X)
    c = np.trace(total).real / X.dim
    return float(np.max(np.abs(total - c * np.eye(X.dim))))


def rates(X: InstrumentalMatrix, rho: np.ndarray) -> np.ndarray:
    """Per-row probabilities ``Tr(Lambda_j rho)`` (without the exposure weight)."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (X.dim, X.dim):
        raise DimensionMismatch(f"state {rho.shape} vs protocol dim {X.dim}")
    lam = np.einsum("ja,ab,jb->j", X.rows, rho, X.rows.conj()).real
    return np.clip(lam, 0.0, None)


def lorentz_of_state(psi: np.ndarray) -> np.ndarray:
    """Unit-determinant ``L`` proportional to ``psi^-1`` for a square purification.

    ``L rho L^+ = (det rho)^(1/s) I`` for ``rho = psi psi^+``.
    """
    psi = np.asarray(psi, dtype=complex)
    s = psi.shape[0]
    if psi.shape != (s, s):
        raise SingularState(f"purification must be square, got {psi.shape}")
    if not np.all(np.isfinite(psi)) or np.linalg.cond(psi) >= COND_LIMIT:
        raise SingularState("purification is (numerically) singular; regularize the spectrum first")
    L = np.linalg.inv(psi) / np.sqrt(s)
    det = np.linalg.det(L)
    return L / det ** (1.0 / s)


def apply_lorentz(X: InstrumentalMatrix, L: np.ndarray) -> InstrumentalMatrix:
    """Right-multiply every row by ``L``; the squared row norm moves into the weight."""
    L = np.asarray(L, dtype=complex)
    if L.shape != (X.dim, X.dim):
        raise DimensionMismatch(f"transform {L.shape} vs protocol dim {X.dim}")
    out = X.rows @ L
    norms2 = np.sum(np.abs(out) ** 2, axis=1)
    return InstrumentalMatrix(out / np.sqrt(norms2)[:, None], X.weights * norms2)


def normalize_exposure(X: InstrumentalMatrix, rho_ref: np.ndarray, n: float) -> InstrumentalMatrix:
    """Rescale all weights by one factor so that ``sum_j t_j Tr(Lambda_j rho_ref) = n``."""
    total = float(X.weights @ rates(X, rho_ref))
    if total <= 0:
        raise ZeroRate("reference state is invisible to the protocol")
    return InstrumentalMatrix(X.rows, X.weights * (n / total))


def lorentz_protocol(
    base: InstrumentalMatrix, rho_ref: np.ndarray, n: float, rho_expected: np.ndarray | None = None
) -> InstrumentalMatrix:
    """Base protocol moved to the rest frame of ``rho_ref``, exposed for ``n`` events.

    Exposures are normalized against ``rho_expected`` (default ``rho_ref``),
    the best available guess of the state that will actually be measured.

    The purification is taken in the Hermitian gauge ``psi = rho^1/2``, so
    ``L`` is proportional to ``rho^-1/2``: a pure boost with no rotation,
    like the qubit rest-frame boost.  In any other gauge the rotation can
    carry a base row onto the dominant eigenvector.  The canonical
    eigenvector gauge, for instance, turns the first computational-basis
    row into exactly that vector, and its detection probability goes to one.
    """
    L = lorentz_of_state(psd_sqrt(rho_ref))
    expected = rho_ref if rho_expected is None else rho_expected
    return normalize_exposure(apply_lorentz(base, L), expected, n)
