import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from countcal.data import stack
from countcal.errors import ValidationError
from countcal.exact import ExactGP, fit_mle_dense, log_likelihood_dense, predict_dense
from countcal.experiments import testbed
from countcal.kernel import KernelSpec, cross_cov
from countcal.vecchia import (
    Ordering, VecchiaSurrogate, _Terms, build_neighbors, fit_vecchia, maximin_order, predict_vecchia,
    vecchia_log_likelihood,
)


# --- brute-force oracles -----------------------------------------------------

def brute_maximin(X, scales=None):
    inv = 1.0 / (np.ones(X.shape[1]) if scales is None else np.asarray(scales))
    first = int(np.argmin((((X - X.mean(axis=0)) * inv) ** 2).sum(axis=1)))
    order = [first]
    left = [i for i in range(len(X)) if i != first]
    while left:
        dmin = [min((((X[i] - X[j]) * inv) ** 2).sum() for j in order) for i in left]
        best = max(dmin)
        pick = next(i for i, d in zip(left, dmin) if d == best)
        order.append(pick)
        left.remove(pick)
    return order


def brute_neighbors(X, perm, m, scales=None):
    Z = X[perm] / (np.ones(X.shape[1]) if scales is None else np.asarray(scales))
    n = len(Z)
    out = []
    for i in range(n):
        d = ((Z[:i] - Z[i]) ** 2).sum(axis=1)
        pick = np.lexsort((np.arange(i), d))[: min(m, i)]
        out.append(sorted(pick.tolist()))
    return out


# --- ordering ----------------------------------------------------------------

def test_maximin_small_example():
    X = np.array([[0.0], [0.1], [0.5], [1.0]])
    assert maximin_order(X).perm.tolist() == [2, 0, 3, 1]


def test_maximin_singleton():
    assert maximin_order([[0.3, 0.2]]).perm.tolist() == [0]


def test_maximin_duplicates_deterministic():
    X = np.array([[0.2], [0.2], [0.7], [0.7], [0.4]])
    a = maximin_order(X).perm
    assert sorted(a.tolist()) == list(range(5))
    assert np.array_equal(a, maximin_order(X).perm)


@given(st.integers(2, 40), st.integers(1, 3), st.integers(0, 10_000))
def test_maximin_matches_brute_force(n, d, seed):
    X = np.random.default_rng(seed).random((n, d))
    scales = np.random.default_rng(seed + 1).uniform(0.1, 2.0, d)
    assert maximin_order(X, scales).perm.tolist() == brute_maximin(X, scales)


def test_ordering_rejects_non_permutation():
    with pytest.raises(ValidationError):
        Ordering([0, 0, 1])


# --- neighbors ---------------------------------------------------------------

@given(st.integers(2, 60), st.integers(1, 4), st.integers(1, 12), st.integers(0, 10_000))
def test_neighbors_match_brute_force(n, d, m, seed):
    X = np.random.default_rng(seed).random((n, d))
    o = maximin_order(X)
    nb = build_neighbors(X, o, m)
    ref = brute_neighbors(X, o.perm, m)
    for i in range(n):
        assert nb[i].tolist() == ref[i]


def test_full_conditioning_uses_all_predecessors(rng):
    X = rng.random((30, 2))
    o = maximin_order(X)
    nb = build_neighbors(X, o, 40)
    for i in range(30):
        assert nb[i].tolist() == list(range(i))


def test_second_row_conditions_on_first(rng):
    X = rng.random((20, 3))
    o = maximin_order(X)
    for m in (1, 5, 25):
        assert build_neighbors(X, o, m)[1].tolist() == [0]


def test_anisotropic_neighbors_follow_tight_coordinate():
    a = np.linspace(0, 1, 15)
    X = np.array([(x, y) for x in a for y in a])
    scales = (0.01, 1.0)
    o = maximin_order(X, scales)
    nb = build_neighbors(X, o, 10, scales)
    ref = brute_neighbors(X, o.perm, 10, scales)
    Xo = X[o.perm]
    dx0, dx1 = [], []
    for i in range(len(X)):
        assert nb[i].tolist() == ref[i]
        if i > 50:
            dx0.append(np.abs(Xo[nb[i], 0] - Xo[i, 0]).mean())
            dx1.append(np.abs(Xo[nb[i], 1] - Xo[i, 1]).mean())
    assert np.mean(dx0) < 0.2 * np.mean(dx1)


def test_neighbor_m_must_be_positive(rng):
    X = rng.random((5, 1))
    with pytest.raises(ValidationError):
        build_neighbors(X, maximin_order(X), 0)


# --- likelihood --------------------------------------------------------------

def setup(n, d, seed, m, theta=0.3):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    y = rng.standard_normal(n)
    spec = KernelSpec(np.full(d, theta), 1.2, 1e-4)
    o = maximin_order(X)
    return X, y, spec, o, build_neighbors(X, o, m)


def test_full_conditioning_is_exact():
    X, y, spec, o, nb = setup(200, 3, 0, 199)
    v = vecchia_log_likelihood(spec, X, y, o, nb)
    ref = log_likelihood_dense(spec, X, y)
    assert abs(v - ref) <= 1e-6 * abs(ref)


def test_single_point_term():
    spec = KernelSpec([1.0], 2.0, 0.5)
    o = maximin_order([[0.3]])
    nb = build_neighbors([[0.3]], o, 3)
    y = 0.7
    ref = -0.5 * (np.log(2 * np.pi * 2.5) + y * y / 2.5)
    assert vecchia_log_likelihood(spec, [[0.3]], [y], o, nb) == pytest.approx(ref, rel=1e-14)


def test_larger_m_is_closer_to_dense():
    rng = np.random.default_rng(42)
    X = rng.random((500, 3))
    spec = KernelSpec([0.3, 0.3, 0.3], 1.0, 1e-6)
    L = np.linalg.cholesky(cross_cov(spec, X, X) + 1e-6 * np.eye(500))
    y = L @ rng.standard_normal(500)
    o = maximin_order(X)
    ref = log_likelihood_dense(spec, X, y)
    err = {m: abs(vecchia_log_likelihood(spec, X, y, o, build_neighbors(X, o, m)) - ref) for m in (5, 25)}
    assert err[25] < err[5]


def test_grid_path_identical_to_generic():
    data = stack(testbed.random_corpus(8, 60, 1))
    yc = data.responses - data.responses.mean()
    spec = KernelSpec([0.4, 0.5, 0.6, 0.3, 0.9], float(np.var(yc)), 1e-6 * float(np.var(yc)))
    o = maximin_order(data.inputs, spec.theta)
    nb = build_neighbors(data.inputs, o, 25, spec.theta)
    grid = _Terms(data.inputs, yc, o, nb, 3, data)
    generic = _Terms(data.inputs, yc, o, nb, 3)
    assert grid.grid is not None and generic.grid is None
    a, b = grid.evaluate(spec), generic.evaluate(spec)
    for x, z in zip(a[:3], b[:3]):
        assert np.array_equal(x, z)
    assert grid(spec) == generic(spec)


def test_local_conditionals_recompute():
    X, y, spec, o, nb = setup(60, 2, 5, 8)
    terms = _Terms(X, y, o, nb)
    _, cm, cv, _ = terms.evaluate(spec)
    Xo, yo = X[o.perm], y[o.perm]
    for i in (0, 1, 17, 59):
        h = nb[i]
        if h.size == 0:
            assert cm[i] == 0.0 and cv[i] == pytest.approx(spec.tau2 + spec.nugget)
            continue
        C = cross_cov(spec, Xo[h], Xo[h]) + spec.nugget * np.eye(h.size)
        k = cross_cov(spec, Xo[i : i + 1], Xo[h])[0]
        w = np.linalg.solve(C, k)
        assert cm[i] == pytest.approx(w @ yo[h], abs=1e-10)
        assert cv[i] == pytest.approx(spec.tau2 + spec.nugget - w @ k, abs=1e-10)


# --- fitting -----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_fit():
    data = stack(testbed.random_corpus(6, 40, 3))
    return data, fit_vecchia(data, 25, 150)


def test_default_m():
    assert fit_vecchia.__defaults__[0] == 25


def test_stage_guard(small_fit):
    _, model = small_fit
    r = model.fit_report
    assert model.log_likelihood() == pytest.approx(max(r["stage_logliks"]), rel=1e-12)
    assert r["kept_stage"] in (1, 2)


def test_refit_bit_identical(small_fit):
    data, model = small_fit
    again = fit_vecchia(data, 25, 150)
    assert again.spec == model.spec


def test_full_conditioning_fit_matches_dense():
    rng = np.random.default_rng(11)
    from countcal.data import AffineMap, StackedDesign
    data = StackedDesign(rng.random((6, 1)), rng.random((5, 1)), rng.standard_normal(30),
                         AffineMap([0.0, 0.0], [1.0, 1.0]), 1)
    yc = data.responses - data.responses.mean()
    spec = KernelSpec([0.4, 0.7], 0.9, 1e-3)
    o = maximin_order(data.inputs)
    nb = build_neighbors(data.inputs, o, 29)
    # identical objectives
    assert vecchia_log_likelihood(spec, data.inputs, yc, o, nb) == pytest.approx(
        log_likelihood_dense(spec, data.inputs, yc), rel=1e-10)
    v = fit_vecchia(data, 29, 400)
    d = fit_mle_dense(data.inputs, data.responses, budget=800)
    assert v.log_likelihood() == pytest.approx(d.loglik, abs=1e-2 * abs(d.loglik) + 1e-2)


# --- prediction --------------------------------------------------------------

def test_prediction_interpolates(small_fit):
    data, model = small_fit
    m = VecchiaSurrogate(model.spec.replace(nugget=0.0), data, model.ordering, model.neighbors, 25)
    p = m.predict(data.inputs[[3, 100]])
    np.testing.assert_allclose(p.means, data.responses[[3, 100]], atol=1e-6)


def test_full_conditioning_prediction_equals_dense(rng):
    from countcal.data import AffineMap, StackedDesign
    data = StackedDesign(rng.random((8, 2)), rng.random((5, 1)), rng.standard_normal(40),
                         AffineMap([0.0] * 3, [1.0] * 3), 2)
    spec = KernelSpec([0.5, 0.6, 0.8], 1.1, 1e-5)
    o = maximin_order(data.inputs)
    model = VecchiaSurrogate(spec, data, o, build_neighbors(data.inputs, o, 40), 40)
    Xq = rng.random((12, 3))
    a = predict_vecchia(model, Xq)
    b = predict_dense(ExactGP(spec, data.inputs, data.responses), Xq)
    np.testing.assert_allclose(a.means, b.means, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(a.sds, b.sds, rtol=1e-6, atol=1e-8)


def test_prediction_neighbors_brute_force(small_fit):
    data, model = small_fit
    rng = np.random.default_rng(9)
    Xq = rng.random((20, data.d))
    nb = model.prediction_neighbors(Xq)
    Z = data.inputs * model.spec.inv_theta
    for q, row in zip(Xq * model.spec.inv_theta, nb):
        d = ((Z - q) ** 2).sum(axis=1)
        pick = np.lexsort((model.ordering.rank, d))[:25]
        assert row.tolist() == sorted(pick.tolist(), key=lambda j: model.ordering.rank[j])


def test_field_predictor_matches_generic(small_fit):
    data, model = small_fit
    sch = testbed.field_schedule(30, 2)
    from countcal.data import normalize_locations
    Q = normalize_locations(sch.directions)
    fp = model.field_predictor(Q)
    for u in ([0.3, 0.7], [0.0, 1.0], [0.55, 0.12]):
        Xq = np.hstack([Q, np.tile(u, (30, 1))])
        ref = model.predict(Xq)
        assert np.array_equal(fp.neighbors(u), model.prediction_neighbors(Xq))
        got = fp.predict(u)
        np.testing.assert_allclose(got.means, ref.means, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(got.sds, ref.sds, rtol=1e-8, atol=1e-12)


def test_query_width_checked(small_fit):
    with pytest.raises(ValidationError):
        small_fit[1].predict(np.zeros((2, 3)))


# --- persistence -------------------------------------------------------------

def test_save_load_round_trip(small_fit, tmp_path):
    data, model = small_fit
    model.save(tmp_path / "a.npz", testbed.DOMAIN)
    model.save(tmp_path / "b.npz", testbed.DOMAIN)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = VecchiaSurrogate.load(tmp_path / "a.npz")
    assert back.spec == model.spec and back.domain.names == testbed.DOMAIN.names
    Xq = np.random.default_rng(0).random((5, data.d))
    assert np.array_equal(back.predict(Xq).means, model.predict(Xq).means)


def test_save_rejects_mismatched_domain(small_fit, tmp_path):
    from countcal.data import ParameterDomain
    bad = ParameterDomain(("a", "b"), [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValidationError):
        small_fit[1].save(tmp_path / "x.npz", bad)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "junk.npz"
    p.write_bytes(b"not a zip")
    with pytest.raises(ValidationError):
        VecchiaSurrogate.load(p)
