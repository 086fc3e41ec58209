"""Closed-loop tracking of an evolving qudit with Lorentz-adapted protocols.

Every step evolves the true state by ``exp(-i eps H_j)`` with the periodically
modulated Hamiltonian ``H_j = H0 (1 + g sin(2 pi j / T))``.  It then measures
the state with a protocol tuned to the previous estimate and reconstructs it.
Step 0 uses the plain MUB protocol.

Alongside the ensemble state, two pure representatives are followed.  Both
start at the dominant eigenvector of the initial state:

* the unperturbed one only evolves;
* the weakly perturbed one also passes, every step, through the "no click"
  complement ``I - |phi_j><phi_j|`` of each protocol row.

Their fidelity measures the back-action of the measurement on the
representatives that were not registered.  The MUB protocol of step 0 is a
complete projective measurement, so it has no unregistered branch.  The weak
representative is therefore only exposed from step 1 on.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np
from scipy import stats

from . import estimator, protocol, qmat
from .errors import InvalidArgs, StepError, TomographyError, ZeroSurvival
from .protocol import InstrumentalMatrix

log = logging.getLogger(__name__)

SURVIVAL_FLOOR = 1e-150


@dataclass(frozen=True)
class EvolutionConfig:
    dim: int = 8
    eps: float = 3e-5
    g: float = 0.5
    period: int = 1000
    total_steps: int = 5000
    sample_size: float = 1e4
    target_weight: float = 0.9999
    initial_weight: float = 0.999999
    hamiltonian_seed: int = 1
    state_seed: int = 2
    noise_seed: int = 3

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidArgs("eps must be positive")
        if self.period < 1:
            raise InvalidArgs("period must be at least one step")
        if self.total_steps < 1:
            raise InvalidArgs("need at least one step")
        if self.sample_size <= 0:
            raise InvalidArgs("sample size must be positive")
        for w in (self.target_weight, self.initial_weight):
            qmat.spectrum(self.dim, self.dim, w)
        if self.target_weight >= 1.0:
            raise InvalidArgs("target weight must be below one so the protocol state is invertible")


@dataclass(frozen=True)
class TrackingRecord:
    step: int
    recon_fidelity: float
    loss: float
    efficiency: float
    detection_fractions: np.ndarray
    backaction_fidelity: float
    survival: float

    @property
    def max_detection_fraction(self) -> float:
        return float(np.max(self.detection_fractions))

    @property
    def sum_detection_fraction(self) -> float:
        return float(np.sum(self.detection_fractions))


def hamiltonian_at(h0: np.ndarray, g: float, period: int, step: int) -> np.ndarray:
    return h0 * (1.0 + g * np.sin(2 * np.pi * step / period))


def propagator(h: np.ndarray, eps: float) -> np.ndarray:
    """``exp(-i eps H)`` from the eigendecomposition of a Hermitian ``H``."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * eps * w)) @ qmat.dagger(v)


def evolve(rho: np.ndarray, h: np.ndarray, eps: float) -> np.ndarray:
    u = propagator(h, eps)
    return u @ rho @ qmat.dagger(u)


def adapt_protocol(
    rho_prev: np.ndarray | None, base: InstrumentalMatrix, weight: float, n: float
) -> InstrumentalMatrix:
    """Lorentz protocol tuned to the regularized previous estimate.

    The boost comes from the regularized state.  The exposure is normalized
    against the estimate itself, so about ``n`` events are registered when
    the state is purer than the regularization target.  ``None`` (step 0)
    gives the untransformed base protocol, normalized to ``n``.
    """
    if rho_prev is None:
        return protocol.normalize_exposure(base, np.eye(base.dim) / base.dim, n)
    rho_prev = qmat.normalize(rho_prev)
    reg = qmat.regularize_spectrum(rho_prev, weight)
    return protocol.lorentz_protocol(base, reg, n, rho_expected=rho_prev)


def backaction_step(phi: np.ndarray, u0: np.ndarray, X: InstrumentalMatrix) -> tuple[np.ndarray, float]:
    """Evolve a pure state and pass it through every row's no-click projector in order.

    Returns the renormalized state and the probability that no row clicked.
    """
    psi = u0 @ np.asarray(phi, dtype=complex).reshape(-1)
    norm0 = float(np.vdot(psi, psi).real)
    for row in X.rows:
        psi = psi - row.conj() * (row @ psi)
    surv = float(np.vdot(psi, psi).real) / norm0
    if surv < SURVIVAL_FLOOR:
        raise ZeroSurvival("the weakly perturbed representative was annihilated")
    return psi / np.sqrt(surv * norm0), surv


def detection_fractions(X: InstrumentalMatrix, rho: np.ndarray) -> np.ndarray:
    """Click probability ``<phi_j| rho |phi_j>`` of one representative, per row."""
    return protocol.rates(X, qmat.normalize(rho))


def initial_state(cfg: EvolutionConfig) -> np.ndarray:
    return qmat.random_mixed_state(
        qmat.StateGenConfig(cfg.dim, cfg.dim, cfg.initial_weight, cfg.state_seed)
    )


def run_tracking(cfg: EvolutionConfig) -> Iterator[TrackingRecord]:
    """Yield one TrackingRecord per step, in step order."""
    s, n = cfg.dim, cfg.sample_size
    base = protocol.mub_protocol(s)
    h0 = qmat.random_hermitian(s, cfg.hamiltonian_seed)
    w0, v0 = np.linalg.eigh(h0)
    rho = initial_state(cfg)
    _, vecs = qmat.eigh_descending(rho)
    clean = vecs[:, 0].copy()
    weak = clean.copy()
    noise = np.random.default_rng(cfg.noise_seed)
    bound = estimator.min_loss(s, s, n)
    rho_hat = psi_hat = None

    for j in range(cfg.total_steps):
        try:
            scale = 1.0 + cfg.g * np.sin(2 * np.pi * j / cfg.period)
            u0 = (v0 * np.exp(-1j * cfg.eps * scale * w0)) @ qmat.dagger(v0)
            rho = u0 @ rho @ qmat.dagger(u0)
            rho = (rho + qmat.dagger(rho)) / 2
            X = adapt_protocol(rho_hat, base, cfg.target_weight, n)
            clean = u0 @ clean
            if rho_hat is None:
                weak, surv = u0 @ weak, 1.0
            else:
                weak, surv = backaction_step(weak, u0, X)
            rec = estimator.sample_counts(X, rho, noise, n)
            fit = estimator.mle_reconstruct(rec, s, psi0=psi_hat, seed=cfg.noise_seed + j)
        except TomographyError as exc:
            raise StepError(j, exc) from exc
        rho_hat, psi_hat = fit.rho, fit.psi
        fid = qmat.fidelity(rho_hat, rho)
        loss = max(1.0 - fid, 0.0)
        yield TrackingRecord(
            step=j,
            recon_fidelity=fid,
            loss=loss,
            efficiency=bound / loss if loss > 0 else float("inf"),
            detection_fractions=detection_fractions(X, rho),
            backaction_fidelity=float(abs(np.vdot(clean, weak)) ** 2),
            survival=surv,
        )


def dominant_period(series: np.ndarray) -> float:
    """Period (in steps) of the largest non-zero-frequency DFT component of ``series``."""
    x = np.asarray(series, dtype=float)
    power = np.abs(np.fft.rfft(x - x.mean())) ** 2
    k = int(np.argmax(power[1:])) + 1
    return len(x) / k


def trend_test(series: np.ndarray) -> tuple[float, float]:
    """Mann-Kendall statistic (Kendall tau against time) and its two-sided p-value."""
    x = np.asarray(series, dtype=float)
    res = stats.kendalltau(np.arange(len(x)), x)
    return float(res.statistic), float(res.pvalue)


def config_dict(cfg: EvolutionConfig) -> dict:
    return asdict(cfg)
