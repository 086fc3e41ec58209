import numpy as np
import pytest
from hypothesis import given, strategies as st

from lorentomo import estimator, protocol, qmat
from lorentomo.errors import DivisionByZero, InvalidArgs, RankDeficientData
from lorentomo.estimator import CountRecord
from lorentomo.protocol import InstrumentalMatrix

from conftest import random_density, random_ket


def noiseless(X, rho):
    return CountRecord(X.weights * protocol.rates(X, rho), X, 0.0)


def test_sample_counts_zero_rates():
    X = protocol.normalize_exposure(protocol.mub_protocol(2), np.eye(2) / 2, 0.0)
    rec = estimator.sample_counts(X, np.eye(2) / 2, 0)
    assert np.all(rec.counts == 0)


def test_sample_counts_total_within_five_sigma():
    X = protocol.normalize_exposure(protocol.mub_protocol(8), np.eye(8) / 8, 1e4)
    rec = estimator.sample_counts(X, np.eye(8) / 8, 11)
    assert rec.counts.shape == (72,)
    assert abs(rec.total - 1e4) <= 500
    assert rec.sample_size == pytest.approx(1e4)


def test_sample_counts_doubling_exposure():
    rho = random_density(4, 3)
    X = protocol.normalize_exposure(protocol.mub_protocol(4), rho, 1e3)
    X2 = InstrumentalMatrix(X.rows, 2 * X.weights)
    means = np.mean([estimator.sample_counts(X, rho, s).counts for s in range(400)], axis=0)
    means2 = np.mean([estimator.sample_counts(X2, rho, s).counts for s in range(400)], axis=0)
    assert means2.sum() / means.sum() == pytest.approx(2.0, rel=0.02)


def test_sample_counts_deterministic():
    rho = random_density(3, 1)
    X = protocol.normalize_exposure(protocol.mub_protocol(3), rho, 100)
    a = estimator.sample_counts(X, rho, 5).counts
    b = estimator.sample_counts(X, rho, 5).counts
    assert np.array_equal(a, b)


def test_count_record_validation():
    X = protocol.mub_protocol(2)
    with pytest.raises(InvalidArgs):
        CountRecord(np.ones(5), X, 1.0)
    with pytest.raises(InvalidArgs):
        CountRecord(np.r_[-1, np.ones(5)], X, 1.0)


def test_noiseless_pure_qubit():
    c = random_ket(2, 4)
    rho = np.outer(c, c.conj())
    X = protocol.normalize_exposure(protocol.mub_protocol(2), rho, 1e4)
    fit = estimator.mle_reconstruct(noiseless(X, rho), 1)
    assert fit.complete
    assert qmat.fidelity(fit.rho, rho) >= 1 - 1e-9
    assert np.trace(fit.rho).real == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("s", [3, 4, 8])
def test_noiseless_full_rank(s):
    rho = random_density(s, s)
    X = protocol.normalize_exposure(protocol.mub_protocol(s), rho, 1e4)
    fit = estimator.mle_reconstruct(noiseless(X, rho), s)
    assert 1 - qmat.fidelity(fit.rho, rho) < 1e-9


def test_single_basis_flags_incomplete():
    rho = random_density(2, 0)
    base = protocol.mub_protocol(2)
    X = InstrumentalMatrix(base.rows[:2], np.full(2, 100.0))
    assert not estimator.informationally_complete(X)
    fit = estimator.mle_reconstruct(noiseless(X, rho), 2)
    assert not fit.complete
    # the measured populations are still reproduced
    np.testing.assert_allclose(protocol.rates(X, fit.rho), protocol.rates(X, rho), atol=1e-8)


def test_informationally_complete_mub():
    assert estimator.informationally_complete(protocol.mub_protocol(4))


@pytest.mark.parametrize("point", range(10))
def test_gradient_matches_finite_differences(point):
    rng = np.random.default_rng(100 + point)
    s, r = 4, 2
    rho = random_density(s, point)
    X = protocol.normalize_exposure(protocol.mub_protocol(s), rho, 1e3)
    rec = estimator.sample_counts(X, rho, point)
    psi = rng.standard_normal((s, r)) + 1j * rng.standard_normal((s, r))
    g = estimator.log_likelihood_grad(psi, rec)
    analytic = np.concatenate([2 * g.real.ravel(), 2 * g.imag.ravel()])
    h = 1e-6
    numeric = np.empty_like(analytic)
    for idx in range(psi.size):
        for part, unit in ((0, 1.0), (1, 1j)):
            d = np.zeros(psi.size, complex)
            d[idx] = unit * h
            d = d.reshape(psi.shape)
            diff = estimator.log_likelihood(psi + d, rec) - estimator.log_likelihood(psi - d, rec)
            numeric[part * psi.size + idx] = diff / (2 * h)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) < 1e-5


def test_likelihood_ascent_and_stationarity():
    rho = qmat.regularize_spectrum(random_density(8, 9), 0.9999)
    X = protocol.lorentz_protocol(protocol.mub_protocol(8), rho, 1e4)
    rec = estimator.sample_counts(X, rho, 9)
    fit = estimator.mle_reconstruct(rec, 8, keep_history=True)
    h = np.asarray(fit.history)
    assert len(h) > 1
    assert np.all(np.diff(h) >= -1e-12 * np.abs(h[1:]))
    assert fit.residual <= 1e-8
    assert fit.loglik == pytest.approx(estimator.log_likelihood(fit.psi, rec), rel=1e-12)


def test_residual_is_likelihood_fixed_point():
    rho = random_density(3, 2)
    X = protocol.normalize_exposure(protocol.mub_protocol(3), rho, 1e3)
    rec = estimator.sample_counts(X, rho, 2)
    fit = estimator.mle_reconstruct(rec, 3)
    g = estimator.log_likelihood_grad(fit.psi, rec)
    assert np.linalg.norm(g) <= 1e-6 * max(1.0, rec.total)


def test_mle_beats_perturbations():
    # the returned state is a maximum: nearby states have lower likelihood
    rho = random_density(3, 8)
    X = protocol.normalize_exposure(protocol.mub_protocol(3), rho, 500)
    rec = estimator.sample_counts(X, rho, 8)
    fit = estimator.mle_reconstruct(rec, 3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = 1e-3 * (rng.standard_normal(fit.psi.shape) + 1j * rng.standard_normal(fit.psi.shape))
        assert estimator.log_likelihood(fit.psi + d, rec) <= fit.loglik + 1e-9


def test_consistency_with_sample_size():
    losses = {}
    for n in (1e3, 1e5):
        vals = []
        for seed in range(20):
            rho = random_density(2, seed)
            X = protocol.normalize_exposure(protocol.mub_protocol(2), rho, n)
            fit = estimator.mle_reconstruct(estimator.sample_counts(X, rho, seed), 2)
            vals.append(1 - qmat.fidelity(fit.rho, rho))
        losses[n] = np.median(vals)
    assert losses[1e5] < losses[1e3]


def test_rank_deficient_data():
    X = InstrumentalMatrix(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(RankDeficientData):
        estimator.mle_reconstruct(CountRecord(np.array([5, 5]), X, 10.0), 1)


def test_no_events_rejected():
    X = protocol.mub_protocol(2)
    with pytest.raises(InvalidArgs):
        estimator.mle_reconstruct(CountRecord(np.zeros(6), X, 0.0), 1)


def test_warm_start_is_used():
    rho = random_density(4, 6)
    X = protocol.normalize_exposure(protocol.mub_protocol(4), rho, 1e4)
    rec = estimator.sample_counts(X, rho, 6)
    cold = estimator.mle_reconstruct(rec, 4)
    warm = estimator.mle_reconstruct(rec, 4, psi0=cold.psi)
    assert warm.iterations <= cold.iterations
    assert qmat.fidelity(warm.rho, cold.rho) == pytest.approx(1.0, abs=1e-9)


def test_min_loss_examples():
    assert estimator.degrees_of_freedom(8, 8) == 63
    assert estimator.min_loss(8, 8, 1e4) == pytest.approx(1.4175e-2, rel=1e-12)
    assert estimator.degrees_of_freedom(2, 1) == 2
    assert estimator.min_loss(2, 1, 100) == pytest.approx(0.01, rel=1e-12)


@pytest.mark.parametrize("args", [(1, 1, 10), (4, 0, 10), (4, 5, 10), (4, 2, 0)])
def test_min_loss_invalid(args):
    with pytest.raises(InvalidArgs):
        estimator.min_loss(*args)


def test_efficiency_examples():
    ml = estimator.min_loss(8, 8, 1e4)
    assert estimator.efficiency(ml, 8, 8, 1e4) == pytest.approx(1.0)
    assert estimator.efficiency(2 * ml, 8, 8, 1e4) == pytest.approx(0.5)
    assert estimator.efficiency(2.15997e-6, 8, 8, 1e4) == pytest.approx(6563, abs=1)
    with pytest.raises(DivisionByZero):
        estimator.efficiency(0.0, 8, 8, 1e4)


@given(st.floats(1e-9, 1.0), st.integers(2, 16), st.floats(1.0, 1e6))
def test_accuracy_report_consistent(loss, s, n):
    rep = estimator.accuracy_report(loss, s, s, n)
    assert rep.efficiency == pytest.approx(rep.min_loss / loss)
    assert rep.dof == s * s - 1
    assert rep.min_loss > 0
