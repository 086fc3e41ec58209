"""Cross-module invariant checks run by ``lorentomo verify``.

Every check is cheap and deterministic.  A check returns ``(ok, detail)``;
``run_suite`` collects them into :class:`CheckResult` rows.  A MUB table
can be swapped in per dimension, which lets a corrupted table be shown to
fail.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.stats import unitary_group

from . import estimator, protocol, qmat, stokes, tracker
from .protocol import InstrumentalMatrix

DIMENSIONS = (2, 3, 4, 8)


@dataclass(frozen=True)
class CheckResult:
    dim: int
    name: str
    ok: bool
    detail: str


def _random_state(s: int, rng) -> np.ndarray:
    weight = rng.uniform(1.0 / s + 0.05, 0.95)
    return qmat.random_mixed_state(qmat.StateGenConfig(s, s, weight, int(rng.integers(2**32))))


def check_mub_orthonormal(X: InstrumentalMatrix, s: int, rng) -> tuple[bool, str]:
    if X.m != s * (s + 1):
        return False, f"{X.m} rows, expected {s * (s + 1)}"
    blocks = X.rows.reshape(s + 1, s, s)
    err = max(float(np.max(np.abs(b @ qmat.dagger(b) - np.eye(s)))) for b in blocks)
    return err < 1e-12, f"max |<a|a'> - delta| = {err:.2e}"


def check_mub_unbiased(X: InstrumentalMatrix, s: int, rng) -> tuple[bool, str]:
    if X.m != s * (s + 1):
        return False, f"{X.m} rows, expected {s * (s + 1)}"
    blocks = X.rows.reshape(s + 1, s, s)
    err = 0.0
    for a in range(s + 1):
        for b in range(a + 1, s + 1):
            ov = np.abs(blocks[a] @ qmat.dagger(blocks[b])) ** 2
            err = max(err, float(np.max(np.abs(ov - 1.0 / s))))
    return err < 1e-12, f"max ||<a|b>|^2 - 1/s| = {err:.2e}"


def check_povm(X: InstrumentalMatrix, s: int, rng) -> tuple[bool, str]:
    total = protocol.weighted_sum(X)
    err = float(np.max(np.abs(total - (s + 1) * np.eye(s))))
    return err < 1e-12, f"max |sum Lambda - (s+1) I| = {err:.2e}"


def check_purify(X, s, rng):
    rho = _random_state(s, rng)
    psi = qmat.purify(rho, s)
    err = float(np.max(np.abs(qmat.density_of(psi) - rho)))
    u = unitary_group.rvs(s, random_state=rng)
    gauge = float(np.max(np.abs(qmat.density_of(psi @ u) - rho)))
    return err < 1e-10 and gauge < 1e-12 + err, f"round trip {err:.2e}, gauge {gauge:.2e}"


def check_fidelity(X, s, rng):
    a, b = _random_state(s, rng), _random_state(s, rng)
    asym = abs(qmat.fidelity(a, b) - qmat.fidelity(b, a))
    self_loss = abs(1.0 - qmat.fidelity(a, a))
    return asym < 1e-10 and self_loss < 1e-10, f"asymmetry {asym:.2e}, 1 - F(a, a) = {self_loss:.2e}"


def check_rest_frame(X, s, rng):
    err = 0.0
    for _ in range(5):
        rho = _random_state(s, rng)
        L = protocol.lorentz_of_state(qmat.purify(rho, s))
        target = np.linalg.det(rho).real ** (1.0 / s) * np.eye(s)
        err = max(err, float(np.max(np.abs(L @ rho @ qmat.dagger(L) - target))))
        err = max(err, abs(np.linalg.det(L) - 1.0))
    return err < 1e-10, f"max |L rho L^+ - det^(1/s) I|, |det L - 1| = {err:.2e}"


def check_adapted_rates(X, s, rng):
    rho = qmat.regularize_spectrum(_random_state(s, rng), 0.99)
    Y = protocol.lorentz_protocol(X, rho, 1e4)
    mu = Y.weights * protocol.rates(Y, rho)
    ratio = float(mu.max() / mu.min())
    total = float(mu.sum())
    return ratio <= 10.0 and abs(total - 1e4) < 1e-6, f"rate spread {ratio:.3f}, total {total:.6f}"


def check_gradient(X, s, rng):
    r = max(1, s // 2)
    rho = _random_state(s, rng)
    rec = estimator.sample_counts(protocol.normalize_exposure(X, rho, 500.0), rho, rng)
    psi = rng.standard_normal((s, r)) + 1j * rng.standard_normal((s, r))
    g = estimator.log_likelihood_grad(psi, rec)
    h = 1e-6
    worst = 0.0
    for _ in range(4):
        d = rng.standard_normal((s, r)) + 1j * rng.standard_normal((s, r))
        fd = (estimator.log_likelihood(psi + h * d, rec) - estimator.log_likelihood(psi - h * d, rec)) / (2 * h)
        an = 2 * float(np.sum((g.conj() * d).real))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return worst < 1e-5, f"relative error {worst:.2e}"


def check_noiseless_mle(X, s, rng):
    rho = _random_state(s, rng)
    Y = protocol.normalize_exposure(X, rho, 1e4)
    exact = estimator.CountRecord(Y.weights * protocol.rates(Y, rho), Y, 1e4)
    fit = estimator.mle_reconstruct(exact, s, seed=int(rng.integers(2**32)))
    loss = 1.0 - qmat.fidelity(fit.rho, rho)
    return loss < 1e-9, f"loss {loss:.2e} after {fit.iterations} iterations"


def check_evolution(X, s, rng):
    rho = _random_state(s, rng)
    h = qmat.random_hermitian(s, int(rng.integers(2**32)))
    out = rho
    for _ in range(100):
        out = tracker.evolve(out, h, 0.01)
    err = float(np.max(np.abs(np.linalg.eigvalsh(out) - np.linalg.eigvalsh(rho))))
    return err < 1e-12, f"spectrum drift {err:.2e} over 100 steps"


def check_backaction(X, s, rng):
    # small overlaps: survival agrees with 1 - sum |<phi|psi>|^2 to second order
    rows = X.rows[:s]
    psi = rows[0].conj() * 1e-3 + rows[1].conj()
    psi /= np.linalg.norm(psi)
    Y = InstrumentalMatrix(rows[:1], np.ones(1))
    _, surv = tracker.backaction_step(psi, np.eye(s), Y)
    first = 1.0 - float(np.sum(np.abs(rows[:1] @ psi) ** 2))
    err = abs(surv - first)
    return err < 1e-12, f"|survival - (1 - overlap)| = {err:.2e}"


def check_interval(X, s, rng):
    if s != 2:
        return True, "qubit only"
    worst = 0.0
    for _ in range(1000):
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        L = expm(np.tensordot(0.5 * a, stokes.SIGMA, axes=1))
        rho = _random_state(2, rng) * rng.uniform(0.5, 2.0)
        out = stokes.lorentz_apply(L, rho)
        p = stokes.stokes_of(out)
        worst = max(worst, abs(p.interval2 - stokes.interval2(rho)) / p.p0**2)
    return worst < 1e-10, f"max relative interval change {worst:.2e}"


def check_qubit_boost(X, s, rng):
    if s != 2:
        return True, "qubit only"
    rho = _random_state(2, rng)
    b = stokes.rest_frame_boost(rho)
    v = stokes.stokes_of(stokes.lorentz_apply(stokes.boost(b), rho)).spatial
    L = protocol.lorentz_of_state(qmat.purify(rho, 2))
    w = stokes.stokes_of(stokes.lorentz_apply(L, rho)).spatial
    err = float(max(np.linalg.norm(v), np.linalg.norm(w)))
    return err < 1e-10, f"rest-frame |P| = {err:.2e}"


CHECKS: dict[str, Callable] = {
    "mub_orthonormal": check_mub_orthonormal,
    "mub_unbiased": check_mub_unbiased,
    "mub_resolves_identity": check_povm,
    "purify_round_trip": check_purify,
    "fidelity_symmetric": check_fidelity,
    "lorentz_rest_frame": check_rest_frame,
    "adapted_rates_uniform": check_adapted_rates,
    "likelihood_gradient": check_gradient,
    "noiseless_mle": check_noiseless_mle,
    "evolution_spectrum": check_evolution,
    "backaction_first_order": check_backaction,
    "interval_invariance": check_interval,
    "qubit_rest_frame": check_qubit_boost,
}


def run_suite(
    dims=DIMENSIONS, tables: dict[int, InstrumentalMatrix] | None = None, seed: int = 0
) -> list[CheckResult]:
    tables = tables or {}
    out = []
    for s in dims:
        X = tables.get(s) or protocol.mub_protocol(s)
        for name, fn in CHECKS.items():
            rng = np.random.default_rng([seed, s, len(out)])
            try:
                ok, detail = fn(X, s, rng)
            except Exception as exc:  # a crash is a failed invariant, not a crashed suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append(CheckResult(s, name, bool(ok), detail))
    return out
