import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from countcal.data import FieldDataset, ParameterDomain
from countcal.diagnostics import ks_uniform
from countcal.errors import CalibrationError, ValidationError
from countcal.experiments.toy import TOY_DOMAIN, ToyProblem, toy_mean
from countcal.inversion import (
    CalibrationProblem, DiscrepancySpec, FunctionModel, McmcConfig, adapt_proposal, gaussian_calibrate,
    metropolis_calibrate, metropolis_calibrate_with_discrepancy, poisson_loglik, poisson_terms,
)
from countcal.vecchia import fit_vecchia

SHORT = dict(iterations=3000, burn_in=500, thin=5)


def line_field(n, exposure, counts=None):
    x = np.linspace(0.02, 0.98, n)
    c = np.zeros(n, dtype=np.int64) if counts is None else counts
    return FieldDataset(x[:, None], c, np.full(n, exposure), np.zeros(n), spherical=False)


def toy_model(field):
    x = field.coords[:, 0]
    return FunctionModel(lambda u: toy_mean(u, x))


# --- Poisson likelihood ------------------------------------------------------

def mp_log_pmf(y, lam):
    mp.mp.dps = 50
    return mp.log(mp.exp(-mp.mpf(lam)) * mp.mpf(lam) ** int(y) / mp.factorial(int(y)))


def test_poisson_zero_count():
    assert poisson_terms([0], [2.0], [0.0], [1.0])[0] == pytest.approx(-2.0, abs=1e-15)


def test_poisson_small_count_value():
    v = poisson_terms([3], [1.0], [0.0], [2.0])[0]
    assert v == pytest.approx(float(mp_log_pmf(3, 2.0)), abs=1e-13)
    assert v == pytest.approx(3 * math.log(2) - 2 - math.log(6), abs=1e-13)
    assert v == pytest.approx(-1.7123179, abs=1e-7)


@given(st.lists(st.tuples(st.integers(0, 50), st.floats(0.01, 5.0), st.floats(0.5, 20.0)), min_size=2, max_size=30),
       st.integers(1, 29))
def test_poisson_additive(items, cut):
    y, mu, e = (np.array(v) for v in zip(*items))
    cut = min(cut, len(items) - 1)
    full = FieldDataset(np.tile([1.0, 0, 0], (len(y), 1)), y, e, np.zeros(len(y)))
    a, b = full.subset(np.arange(cut)), full.subset(np.arange(cut, len(y)))
    total = poisson_loglik(full, mu)
    parts = poisson_loglik(a, mu[:cut]) + poisson_loglik(b, mu[cut:])
    assert total == pytest.approx(parts, rel=1e-12, abs=1e-9)


def test_poisson_background_and_delta():
    t = poisson_terms([2], [3.0], [0.5], [1.0], delta=2.0)[0]
    lam = (2.0 + 0.5) * 3.0
    assert t == pytest.approx(2 * math.log(lam) - lam - math.log(2))


def test_poisson_rejects_nonfinite_rate():
    with pytest.raises(ValidationError, match="index 1"):
        poisson_terms([1, 1], [1.0, 1.0], [0.0, 0.0], [1.0, np.nan])


# --- config ------------------------------------------------------------------

def test_default_draw_count():
    c = McmcConfig()
    assert (c.iterations, c.burn_in, c.thin) == (10_000, 1_000, 10)
    assert c.n_stored == 900


@pytest.mark.parametrize("kw", [{"iterations": 100, "burn_in": 100}, {"thin": 0}, {"proposal_sd": 0.0},
                                {"target_rate": 1.0}, {"burn_in": -1}])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        McmcConfig(**kw)


def test_adapt_rule():
    assert adapt_proposal([True, False, False], [0.1], target=1 / 3)[0] == pytest.approx(0.1)
    assert adapt_proposal([False] * 10, [0.2], target=0.3)[0] == pytest.approx(0.2 * math.exp(-0.3))


# --- sampler mechanics -------------------------------------------------------

@pytest.fixture(scope="module")
def flat_chain():
    # all exposures tiny: the data carry no information and the posterior is the prior
    fd = line_field(5, 1e-12)
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    return metropolis_calibrate(prob, McmcConfig(iterations=20_000, burn_in=1_000, thin=10, seed=3))


def test_prior_recovery(flat_chain):
    for k in range(2):
        assert ks_uniform(flat_chain.u_norm[:, k])[1] > 0.01


def test_draws_in_box_and_count(flat_chain):
    assert flat_chain.n == (20_000 - 1_000) // 10
    assert np.all((flat_chain.u_norm >= 0) & (flat_chain.u_norm <= 1))
    assert flat_chain.loglik_trace.shape == (20_000,)


def test_log_ratio_decomposition(flat_chain):
    r, dec = flat_chain.log_ratios, flat_chain.decisions
    assert np.all(r[:, 2] == 0.0)  # symmetric proposal
    inside = r[:, 1] == 0.0
    expect = np.where(inside, r[:, 3] < r[:, 0], False)
    assert np.array_equal(dec, expect)
    assert not np.any(dec[~inside])  # out-of-box proposals never accepted


def test_same_seed_same_chain():
    fd = line_field(10, 1.0, np.arange(10))
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    a = metropolis_calibrate(prob, McmcConfig(**SHORT, seed=9))
    b = metropolis_calibrate(prob, McmcConfig(**SHORT, seed=9))
    c = metropolis_calibrate(prob, McmcConfig(**SHORT, seed=10))
    assert np.array_equal(a.u, b.u) and not np.array_equal(a.u, c.u)


def test_domain_rescaling_invariance():
    tp = ToyProblem()
    fd = tp.field(0)
    other = ParameterDomain(("a", "b"), [-3.0, 10.0], [5.0, 1000.0])
    pa = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    pb = CalibrationProblem(fd, toy_model(fd), other)
    a = metropolis_calibrate(pa, McmcConfig(**SHORT, seed=4))
    b = metropolis_calibrate(pb, McmcConfig(**SHORT, seed=4))
    assert np.array_equal(a.decisions, b.decisions)
    assert np.array_equal(a.u_norm, b.u_norm)
    np.testing.assert_allclose(b.u, other.denormalize(a.u_norm))


def test_stall_warning():
    fd = line_field(40, 1e5, None)
    x = fd.coords[:, 0]
    counts = np.random.default_rng(0).poisson(toy_mean([0.5, 0.5], x) * 1e5)
    fd = fd.with_counts(counts)
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    post = metropolis_calibrate(prob, McmcConfig(iterations=2500, burn_in=100, thin=10, proposal_sd=0.5,
                                                 adapt=False, initial=(0.5, 0.5)))
    assert post.warning and "consecutive" in post.warning


def test_failure_reports_iteration():
    fd = line_field(5, 1.0)
    calls = {"n": 0}

    def fn(u):
        calls["n"] += 1
        return np.full(5, np.nan if calls["n"] > 20 else 1.0)

    prob = CalibrationProblem(fd, FunctionModel(fn), TOY_DOMAIN)
    with pytest.raises(CalibrationError) as ei:
        metropolis_calibrate(prob, McmcConfig(**SHORT, proposal_sd=1e-3))
    assert ei.value.iteration > 0


def test_initial_outside_box():
    fd = line_field(5, 1.0)
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    with pytest.raises(ValidationError):
        metropolis_calibrate(prob, McmcConfig(**SHORT, initial=(1.5, 0.5)))


# --- toy-problem recovery ----------------------------------------------------

@pytest.fixture(scope="module")
def toy_surrogate():
    tp = ToyProblem()
    return tp, fit_vecchia(tp.stacked(0), 25, 200)


def test_toy_posterior_covers_truth(toy_surrogate):
    tp, model = toy_surrogate
    prob = CalibrationProblem.from_surrogate(tp.field(0), model, tp.domain)
    post = metropolis_calibrate(prob, McmcConfig(seed=0))
    for t, h in zip(tp.truth, post.hpd()):
        assert h.contains(t)
        assert h.width < 0.95  # narrower than the prior's 95% interval
    assert 0.1 <= post.acceptance["u"] <= 0.6


def test_toy_gaussian_recovery():
    tp = ToyProblem()
    fd, y = tp.gaussian_observations(0, noise_sd=0.5)
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN, likelihood="gaussian", observations=y)
    post = gaussian_calibrate(prob, McmcConfig(seed=1))
    for t, h in zip(tp.truth, post.hpd()):
        assert h.contains(t)


def test_noiseless_mode_at_truth():
    fd = line_field(50, 1.0)
    u0 = np.array([0.3, 0.7])
    y = toy_mean(u0, fd.coords[:, 0])
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN, likelihood="gaussian", observations=y + 1e-6 * np.sin(
        np.arange(50)))
    post = gaussian_calibrate(prob, McmcConfig(seed=2, **SHORT))
    mode = post.u_norm[np.argmax(post.stored_loglik)]
    np.testing.assert_allclose(mode, u0, atol=0.02)


def test_gaussian_calibrate_requires_mode():
    fd = line_field(5, 1.0)
    with pytest.raises(ValidationError):
        gaussian_calibrate(CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN), McmcConfig(**SHORT))


# --- discrepancy -------------------------------------------------------------

def delta_problem(delta, seed=0):
    fd = line_field(80, 20.0)
    x = fd.coords[:, 0]
    u0 = np.array([0.35, 0.6])
    counts = np.random.default_rng(seed).poisson(delta * toy_mean(u0, x) * 20.0)
    fd = fd.with_counts(counts)
    return CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN, discrepancy=DiscrepancySpec()), u0


@pytest.mark.parametrize("delta", [1.0, 0.5])
def test_delta_interval_covers_truth(delta):
    prob, u0 = delta_problem(delta)
    post = metropolis_calibrate(prob, McmcConfig(seed=5))
    assert post.delta is not None and np.all(post.delta > 0)
    assert post.delta_hpd().contains(delta)
    assert post.delta_hpd().contains(float(post.delta.mean()))


def test_with_discrepancy_adds_block(tmp_path):
    fd = line_field(10, 1.0, np.arange(10))
    prob = CalibrationProblem(fd, toy_model(fd), TOY_DOMAIN)
    post = metropolis_calibrate_with_discrepancy(prob, McmcConfig(**SHORT))
    assert "delta" in post.acceptance
    post.write_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "iter,u_1,u_2,delta,loglik,accepted"
    post.write_summary(tmp_path / "s.yaml")
    assert "delta" in (tmp_path / "s.yaml").read_text()
