"""Event sampling, maximum-likelihood reconstruction and accuracy metrics.

Counts are independent Poisson variables, one per protocol row, with means
``t_j Tr(Lambda_j rho)``.  Lorentz-transformed protocols are not POVMs, so
the total number of events is not fixed and a multinomial model would be
wrong.

The likelihood of a purification ``psi`` (``rho = psi psi^+``, trace free) is

    l(psi) = sum_j k_j ln(t_j lam_j) - t_j lam_j,   lam_j = |X_j psi|^2

and its stationarity condition is ``A psi = R psi`` with
``A = sum_j t_j Lambda_j`` and ``R = sum_j (k_j / lam_j) Lambda_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DivisionByZero, InvalidArgs, NoConvergence, RankDeficientData
from .protocol import InstrumentalMatrix, rates
from .qmat import dagger

LAMBDA_FLOOR = 1e-300
ASCENT_RTOL = 1e-12
# boundary handling in the whitened frame, relative to the largest eigenvalue
SNAP_RTOL = 1e-4
SNAP_EVERY = 15
NULL_RTOL = 1e-13
POLISH_ITER = 200
POLISH_CHANGE = 1e-6


@dataclass(frozen=True)
class CountRecord:
    counts: np.ndarray
    protocol: InstrumentalMatrix
    sample_size: float

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (self.protocol.m,):
            raise InvalidArgs(f"{counts.shape[0]} counts for {self.protocol.m} protocol rows")
        if np.any(counts < 0):
            raise InvalidArgs("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))


def sample_counts(X: InstrumentalMatrix, rho_true: np.ndarray, seed, n: float | None = None) -> CountRecord:
    """Draw ``k_j ~ Poisson(t_j Tr(Lambda_j rho_true))`` independently for every row."""
    means = X.weights * rates(X, rho_true)
    counts = np.random.default_rng(seed).poisson(means)
    return CountRecord(counts, X, float(np.sum(means)) if n is None else float(n))


def _row_rates(rows: np.ndarray, psi: np.ndarray) -> np.ndarray:
    amp = rows @ psi
    return np.sum(amp.real**2 + amp.imag**2, axis=1)


def log_likelihood(psi: np.ndarray, rec: CountRecord) -> float:
    X = rec.protocol
    lam = np.maximum(_row_rates(X.rows, psi), LAMBDA_FLOOR)
    mu = X.weights * lam
    k = rec.counts
    hit = k > 0
    return float(np.sum(k[hit] * np.log(mu[hit])) - np.sum(mu))


def log_likelihood_grad(psi: np.ndarray, rec: CountRecord) -> np.ndarray:
    """Wirtinger gradient ``dl/dpsi* = (R - A) psi``.

    The derivative with respect to ``Re psi`` is ``2 Re`` of this and with
    respect to ``Im psi`` it is ``2 Im``.
    """
    X = rec.protocol
    lam = np.maximum(_row_rates(X.rows, psi), LAMBDA_FLOOR)
    coef = rec.counts / lam - X.weights
    return dagger(X.rows) @ (coef[:, None] * (X.rows @ psi))


def informationally_complete(X: InstrumentalMatrix, tol: float = 1e-9) -> bool:
    """True if the measurement operators span the full ``s^2``-dimensional operator space."""
    ops = np.einsum("ja,jb->jab", X.rows.conj(), X.rows).reshape(X.m, -1)
    sv = np.linalg.svd(ops, compute_uv=False)
    return int(np.sum(sv > tol * sv[0])) == X.dim**2


@dataclass
class MLEResult:
    rho: np.ndarray
    psi: np.ndarray
    iterations: int
    loglik: float
    residual: float
    complete: bool
    history: list[float] = field(default_factory=list, repr=False)


def _initial_psi(A: np.ndarray, r: int, seed) -> np.ndarray:
    # A^{-1} is the state that a whitened (POVM-like) frame sees as maximally mixed
    w, v = np.linalg.eigh(A)
    inv_sqrt = (v / np.sqrt(w)) @ dagger(v)
    s = A.shape[0]
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((s, r)) + 1j * rng.standard_normal((s, r))
    return inv_sqrt @ (np.eye(s, r) + 1e-3 * noise)


def _line_search_towards(psi, v, rows, t, k, B, B_inv, n_obs):
    """Maximize the likelihood along ``(1 - g) sigma + g n_obs |v><v|`` in the whitened frame.

    The expected total count is ``n_obs`` on the whole segment, so the
    objective reduces to ``sum_j k_j ln mu_j(g)`` with ``mu`` linear in ``g``.
    """
    mu = t * _row_rates(rows, psi)
    mu_v = t * np.abs(rows @ (B_inv @ v)) ** 2 * n_obs

    def slope(g):
        return float(k @ ((mu_v - mu) / np.maximum((1 - g) * mu + g * mu_v, LAMBDA_FLOOR)))

    hi = next((h for h in np.logspace(-14, 0, 29) if slope(h) < 0), None)
    g = 1.0 if hi is None else optimize.brentq(slope, 0.0, hi, xtol=1e-16, rtol=1e-12)
    b = B @ psi
    sigma = (1 - g) * (b @ dagger(b)) + g * n_obs * np.outer(v, v.conj())
    w, vec = np.linalg.eigh(sigma)
    r = psi.shape[1]
    w, vec = w[::-1][:r], vec[:, ::-1][:, :r]
    return B_inv @ (vec * np.sqrt(np.clip(w, 0.0, None)))


def _newton_polish(phi, E, k, max_iter):
    """Trust-region Newton ascent of the whitened likelihood ``sum k ln|E phi|^2 - |E phi|^2``.

    ``E`` holds the whitened rows ``sqrt(t_j) X_j A^-1/2``.  The map converges
    linearly with a rate set by the smallest eigenvalue of the state; Newton
    does not care, which matters for nearly pure states.
    Returns the new amplitude and the number of iterations used.
    """
    s, r = phi.shape
    EH = dagger(E)

    def unpack(x):
        return (x[: s * r] + 1j * x[s * r :]).reshape(s, r)

    def parts(x):
        z = E @ unpack(x)
        mu = np.maximum(np.sum(np.abs(z) ** 2, axis=1), LAMBDA_FLOOR)
        return z, mu

    def f(x):
        _, mu = parts(x)
        return -float(k @ np.log(mu) - mu.sum())

    def grad(x):
        z, mu = parts(x)
        g = EH @ ((k / mu - 1.0)[:, None] * z)
        return -2.0 * np.concatenate([g.real.ravel(), g.imag.ravel()])

    def hess(x):
        z, mu = parts(x)
        M = np.kron(EH @ ((k / mu - 1.0)[:, None] * E), np.eye(r))
        u = E.conj()[:, :, None] * z[:, None, :]  # d mu_j / d conj(phi)
        a = 2.0 * np.concatenate([u.real.reshape(len(mu), -1), u.imag.reshape(len(mu), -1)], axis=1)
        h = 2.0 * np.block([[M.real, -M.imag], [M.imag, M.real]])
        h -= a.T @ ((k / mu**2)[:, None] * a)
        return -h

    x0 = np.concatenate([phi.real.ravel(), phi.imag.ravel()])
    res = optimize.minimize(
        f, x0, jac=grad, hess=hess, method="trust-exact",
        options={"gtol": 1e-12 * float(k.sum()), "maxiter": max_iter},
    )
    return unpack(res.x), int(res.nit)


def mle_reconstruct(
    rec: CountRecord,
    r: int,
    psi0: np.ndarray | None = None,
    seed=0,
    max_iter: int = 10_000,
    damping: float = 0.5,
    tol: float = 1e-10,
    residual_tol: float = 1e-8,
    kkt_tol: float = 1e-6,
    accelerate: bool = True,
    keep_history: bool = False,
) -> MLEResult:
    """Rank-``r`` maximum-likelihood state from Poisson counts.

    The core is the damped fixed-point map

        psi <- psi + a (A^-1 R psi - psi),   a = damping,

    with ``a`` halved whenever the likelihood would drop.  After each step
    the trace is rescaled to its optimum, where the expected total count
    equals the observed one.  Left multiplication by ``A^-1 R`` is covariant
    under ``X -> X L``, so a Lorentz-adapted protocol converges as fast as
    the MUB protocol does on the maximally mixed state.  Everything is
    monitored in the whitened frame ``sigma = A^1/2 rho A^1/2``, where the
    weighted operators sum to the identity.

    Two additions keep the iteration count well inside ``max_iter``:

    * every pair of damped steps is followed by a squared-extrapolation
      (SQUAREM) step, kept only if it does not lower the likelihood
      (``accelerate=False`` disables it);
    * eigen-directions of ``sigma`` that carry almost no weight and are not
      favoured by the gradient are set to exactly zero.  Without this,
      optima on the boundary of the state space are approached like ``1/k``
      because ``p = |a|^2`` makes the likelihood quartic in the amplitude.

    The likelihood is concave in ``rho``.  A fixed point whose null space
    satisfies ``<v|A^-1/2 R A^-1/2|v> <= 1 + kkt_tol`` is therefore the
    global maximum.  If the check fails, an exact line search moves weight
    onto the most favoured null direction and the iteration resumes.

    ``psi0`` warm-starts the iteration.  Otherwise it starts from ``A^-1``
    plus a ``1e-3`` random perturbation seeded by ``seed``; for a POVM
    protocol that is the maximally mixed state.  Convergence requires an
    entrywise change of the normalized ``sigma`` below ``tol`` and a
    relative stationarity residual ``|(A - R) psi| / |A psi|`` below
    ``residual_tol``.

    Raises NoConvergence after ``max_iter`` evaluations of the map, and
    RankDeficientData if a row with counts keeps zero model rate.
    """
    X = rec.protocol
    s = X.dim
    if not 1 <= r <= s:
        raise InvalidArgs(f"rank {r} outside [1, {s}]")
    k = np.asarray(rec.counts, dtype=float)
    n_obs = float(k.sum())
    if n_obs <= 0:
        raise InvalidArgs("no registered events")
    rows, t = X.rows, X.weights
    if np.any((k > 0) & (t <= 0)):
        raise RankDeficientData("events registered on a row with zero exposure")
    rows_h = dagger(rows)
    A = rows_h @ (t[:, None] * rows)
    w, v = np.linalg.eigh(A)
    if w[0] <= 0:
        raise RankDeficientData("protocol leaves part of the state space unmeasured")
    A_inv = (v / w) @ dagger(v)
    B = (v * np.sqrt(w)) @ dagger(v)
    B_inv = (v / np.sqrt(w)) @ dagger(v)

    if psi0 is None:
        psi = _initial_psi(A, r, seed)
    else:
        psi = np.array(psi0, dtype=complex)
        if psi.shape != (s, r):
            raise InvalidArgs(f"warm start has shape {psi.shape}, expected {(s, r)}")

    def rescale(p):
        return p * np.sqrt(n_obs / float(t @ _row_rates(rows, p)))

    def loglik(p):
        lam = np.maximum(_row_rates(rows, p), LAMBDA_FLOOR)
        mu = t * lam
        return float(k @ np.log(mu) - mu.sum()), lam

    def whitened(p):
        b = B @ p
        return b @ dagger(b) / n_obs

    def ratio_op(p, lam_p):
        # whitened R; equals the identity on the support at a fixed point
        R = rows_h @ ((k / lam_p)[:, None] * rows)
        return B_inv @ R @ B_inv

    E = np.sqrt(t)[:, None] * (rows @ B_inv)

    def polish(p):
        nonlocal evals
        phi, its = _newton_polish(B @ p, E, k, POLISH_ITER)
        evals += its
        return B_inv @ phi

    def stationarity(p, lam_p):
        grad = rows_h @ ((k / lam_p - t)[:, None] * (rows @ p))
        return float(np.linalg.norm(grad) / np.linalg.norm(A @ p))

    def fixed_point(p, lam_p, ll_p):
        direction = A_inv @ (rows_h @ ((k / lam_p)[:, None] * (rows @ p))) - p
        step = damping
        for _ in range(60):
            trial = rescale(p + step * direction)
            ll_t, lam_t = loglik(trial)
            if ll_t >= ll_p - ASCENT_RTOL * abs(ll_p):
                return trial, ll_t, lam_t
            step /= 2
        raise NoConvergence("no ascent step found")

    def snap(p, lam_p, threshold):
        sig = whitened(p)
        pw, pv = np.linalg.eigh(sig)
        g = np.einsum("ai,ab,bi->i", pv.conj(), ratio_op(p, lam_p), pv).real - 1.0
        dead = (pw < threshold * pw[-1]) & (pw > 0) & (g <= kkt_tol)
        if not np.any(dead):
            return None
        nv = pv[:, dead]
        return rescale(p - B_inv @ (nv @ (dagger(nv) @ (B @ p))))

    psi = rescale(psi)
    ll, lam = loglik(psi)
    history = [ll] if keep_history else []
    state = whitened(psi)
    snap_threshold = SNAP_RTOL
    evals = 0
    change = np.inf
    residual = np.inf
    while True:
        if evals >= max_iter:
            raise NoConvergence(
                f"no convergence after {evals} iterations (change {change:.3g}, residual {residual:.3g})"
            )
        p1, ll1, lam1 = fixed_point(psi, lam, ll)
        p2, ll2, lam2 = fixed_point(p1, lam1, ll1)
        evals += 2
        new, ll_new, lam_new = p2, ll2, lam2
        if accelerate:
            r_ = p1 - psi
            v_ = p2 - p1 - r_
            nv = np.linalg.norm(v_)
            if nv > 0:
                alpha = min(-1.0, -np.linalg.norm(r_) / nv)
                ext = rescale(psi - 2 * alpha * r_ + alpha**2 * v_)
                ll_e, lam_e = loglik(ext)
                p3, ll3, lam3 = fixed_point(ext, lam_e, ll_e)
                evals += 1
                if ll3 >= ll2:
                    new, ll_new, lam_new = p3, ll3, lam3
        if evals % SNAP_EVERY < 3 and snap_threshold > 0:
            snapped = snap(new, lam_new, snap_threshold)
            if snapped is not None:
                ll_s, lam_s = loglik(snapped)
                if ll_s >= ll_new - ASCENT_RTOL * abs(ll_new):
                    new, ll_new, lam_new = snapped, ll_s, lam_s
        if ll_new < ll - ASCENT_RTOL * abs(ll):
            raise NoConvergence(f"likelihood decreased from {ll!r} to {ll_new!r}")
        psi, ll, lam = new, ll_new, lam_new
        if keep_history:
            history.append(ll)
        new_state = whitened(psi)
        tr = np.trace(new_state).real
        change = float(np.max(np.abs(new_state / tr - state / np.trace(state).real)))
        state = new_state
        stalled = change < POLISH_CHANGE and evals % SNAP_EVERY < 3
        if change >= tol and not stalled:
            continue
        residual = stationarity(psi, lam)
        if residual > residual_tol:
            # the map is crawling along a weakly curved direction; let Newton finish
            psi = polish(psi)
            ll, lam = loglik(psi)
            state = whitened(psi)
            continue
        if change >= tol:
            continue
        # optimality on the null space of sigma; only meaningful below rank r
        pw, pv = np.linalg.eigh(state)
        zero = pw <= NULL_RTOL * pw[-1]
        if not np.any(zero) or np.count_nonzero(~zero) >= r:
            break
        null = pv[:, zero]
        gn, gv = np.linalg.eigh(dagger(null) @ ratio_op(psi, lam) @ null - np.eye(null.shape[1]))
        if gn[-1] <= kkt_tol:
            break
        # a favoured direction was dropped: exact line search towards it, then snap less eagerly
        psi = polish(_line_search_towards(psi, null @ gv[:, -1], rows, t, k, B, B_inv, n_obs))
        ll, lam = loglik(psi)
        state = whitened(psi)
        snap_threshold = snap_threshold / 100 if snap_threshold > 1e-12 else 0.0
    if np.any((k > 0) & (lam <= LAMBDA_FLOOR)):
        raise RankDeficientData("rows with events have zero model rate")
    rho = psi @ dagger(psi)
    rho = (rho + dagger(rho)) / 2
    rho /= np.trace(rho).real
    return MLEResult(rho, psi, evals, ll, residual, informationally_complete(X), history)


def degrees_of_freedom(s: int, r: int) -> int:
    return (2 * s - r) * r - 1


def min_loss(s: int, r: int, n: float) -> float:
    """Smallest mean fidelity loss ``nu^2 / (4 n (s - 1))`` reachable by any POVM protocol."""
    if s < 2 or not 1 <= r <= s or not n > 0:
        raise InvalidArgs(f"need s >= 2, 1 <= r <= s, n > 0; got s={s}, r={r}, n={n}")
    nu = degrees_of_freedom(s, r)
    return nu**2 / (4.0 * n * (s - 1))


def efficiency(loss: float, s: int, r: int, n: float) -> float:
    """Ratio of the POVM loss bound to ``loss``; above one means super-efficiency."""
    if loss == 0:
        raise DivisionByZero("efficiency is undefined for zero loss")
    return min_loss(s, r, n) / loss


@dataclass(frozen=True)
class AccuracyReport:
    loss: float
    min_loss: float
    efficiency: float
    dof: int


def accuracy_report(loss: float, s: int, r: int, n: float) -> AccuracyReport:
    ml = min_loss(s, r, n)
    return AccuracyReport(loss, ml, ml / loss if loss > 0 else float("inf"), degrees_of_freedom(s, r))
