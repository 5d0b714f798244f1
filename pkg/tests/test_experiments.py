import numpy as np
import pytest

from countcal.data import SimulatorCorpus
from countcal.errors import ValidationError
from countcal.experiments import cv, holdout, synth, testbed, timing
from countcal.experiments.output import OutputDir, map_cells, read_table
from countcal.experiments.toy import ToyProblem
from countcal.inversion import FunctionModel, McmcConfig
from countcal.seeding import substream, subseed

# --- seeding -----------------------------------------------------------------

def test_substreams_independent_and_reproducible():
    a = substream(7, "chain", 0).random(5)
    assert np.array_equal(a, substream(7, "chain", 0).random(5))
    assert not np.array_equal(a, substream(7, "chain", 1).random(5))
    assert not np.array_equal(a, substream(7, "pit", 0).random(5))
    assert subseed(7, "x") == subseed(7, "x") != subseed(8, "x")


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_seed_range(bad):
    with pytest.raises(ValueError):
        substream(bad, "x")


# --- testbed / synthesis -----------------------------------------------------

def test_testbed_rates_positive_and_smooth():
    g = testbed.fibonacci_sphere(300)
    for u in ([0, 0], [1, 1], [0.3, 0.8]):
        r = testbed.skymap_rates(u, g)
        assert np.all(r > 0)
    a = testbed.skymap_rates([0.5, 0.5], g)
    b = testbed.skymap_rates([0.5 + 1e-6, 0.5], g)
    assert np.abs(a - b).max() < 1e-5


def test_interior_truths():
    c = testbed.make_corpus(20)
    inner = testbed.interior_runs(c)
    assert inner.size == 36
    u = c.domain.normalize(c.designs[inner])
    assert np.all((u > 0) & (u < 1))


def zero_corpus(n_grid=10):
    dom = testbed.DOMAIN
    return SimulatorCorpus(dom, dom.denormalize([[0.5, 0.5], [0.2, 0.2]]), testbed.fibonacci_sphere(n_grid),
                           np.zeros((2, n_grid)))


def test_zero_rates_give_zero_counts():
    c = zero_corpus()
    res = synth.synth_generate(c, c.designs[0], np.full(10, 100.0), np.zeros(10), 0)
    assert res.field.counts.sum() == 0


def test_mean_count_law_of_large_numbers():
    g = testbed.fibonacci_sphere(5)
    c = testbed.make_corpus(5)
    u = c.designs[20]
    lam = c.rates[20]
    n = 10_000
    dirs = np.tile(g, (n, 1))
    e = np.full(dirs.shape[0], 30.0)
    b = np.full(dirs.shape[0], 0.01)
    res = synth.synth_generate(c, u, e, b, 1, dirs)
    counts = res.field.counts.reshape(n, 5)
    mean = (lam + 0.01) * 30.0
    assert np.all(np.abs(counts.mean(axis=0) - mean) < 3 * np.sqrt(mean / n))


def test_exposure_doubling_doubles_expected_counts():
    c = testbed.make_corpus(30)
    sch = testbed.field_schedule(30, 0)
    u = c.designs[20]
    one = synth.synth_generate(c, u, sch.exposures, sch.backgrounds, 0, sch.directions, testbed.skymap_rates)
    two = synth.synth_generate(c, u, 2 * sch.exposures, sch.backgrounds, 0, sch.directions, testbed.skymap_rates)
    np.testing.assert_allclose(2 * (one.rates + sch.backgrounds) * sch.exposures,
                               (two.rates + sch.backgrounds) * 2 * sch.exposures)
    assert two.field.counts.sum() > one.field.counts.sum()


def test_truth_run_excluded():
    c = testbed.make_corpus(20)
    sub = synth.training_without(c, 20)
    assert sub.n_runs == c.n_runs - 1
    assert not any(np.array_equal(d, c.designs[20]) for d in sub.designs)


def test_synth_requires_grid_points_without_truth_function():
    c = testbed.make_corpus(20)
    with pytest.raises(ValidationError):
        synth.synth_generate(c, c.designs[0], [1.0], [0.0], 0, [[0.0, 0.6, 0.8]])


def test_synth_reproducible():
    c = testbed.make_corpus(20)
    sch = testbed.field_schedule(50, 1)
    a = synth.synth_generate(c, c.designs[9], sch.exposures, sch.backgrounds, 3, sch.directions, testbed.skymap_rates)
    b = synth.synth_generate(c, c.designs[9], sch.exposures, sch.backgrounds, 3, sch.directions, testbed.skymap_rates)
    assert np.array_equal(a.field.counts, b.field.counts)


# --- output helpers ----------------------------------------------------------

def _square(job):
    return job, job * job


def test_map_cells_sorted():
    assert map_cells(_square, [3, 1, 2]) == [(1, 1), (2, 4), (3, 9)]
    assert map_cells(_square, [3, 1, 2], workers=2) == [(1, 1), (2, 4), (3, 9)]


def test_manifest(tmp_path):
    od = OutputDir(tmp_path / "o")
    od.write_metrics([{"a": 1, "b": 0.5, "t_seconds": 1.0}])
    od.echo_config({"x": np.float64(1.5)})
    m = od.write_manifest().read_text().splitlines()
    assert [ln.split()[1] for ln in m] == ["config_echo", "metrics.csv"]
    assert read_table(od.file("metrics.csv"), drop_time=True) == [{"a": "1", "b": "0.5"}]


# --- holdout -----------------------------------------------------------------

def test_full_conditioning_holdout_matches_dense():
    c = testbed.random_corpus(4, 15, 2)
    rows = holdout.holdout_benchmark(c, holdout.HoldoutConfig(m_values=(44,), budget=60, held_out=(0, 2)))
    by = {(r["cell"], r["method"]): r for r in rows}
    for cell in (0, 1):
        assert abs(by[(cell, "vecchia")]["rmse"] - by[(cell, "dense")]["rmse"]) <= 1e-6


def test_holdout_m_values_and_cap(tmp_path):
    c = testbed.random_corpus(5, 30, 4)
    cfg = holdout.HoldoutConfig(m_values=(25, 50, 75, 100), budget=30, held_out=(1,), dense_cap=50)
    rows = holdout.holdout_benchmark(c, cfg, tmp_path)
    assert [r["m"] for r in rows if r["method"] == "vecchia"] == [25, 50, 75, 100]
    dense = [r for r in rows if r["method"] == "dense"][0]
    assert "exceeds dense cap" in dense["note"]
    assert {r["method"] for r in read_table(tmp_path / "summary.csv")} == {"vecchia"}


def test_holdout_needs_three_runs():
    with pytest.raises(ValidationError):
        holdout.holdout_benchmark(zero_corpus())


# --- cross-validation --------------------------------------------------------

def test_folds_balanced():
    f = cv.assign_folds(23, 5, 0)
    counts = np.bincount(f)
    assert counts.sum() == 23 and counts.max() - counts.min() <= 1
    assert np.array_equal(f, cv.assign_folds(23, 5, 0))


def toy_factory():
    from countcal.experiments.toy import toy_mean
    return lambda fd: FunctionModel(lambda u, x=fd.coords[:, 0]: toy_mean(u, x))


def test_cv_two_folds_smoke(tmp_path):
    tp = ToyProblem()
    cfg = cv.CvConfig(folds=2, line_points=5, lattice=4, mcmc=McmcConfig(iterations=600, burn_in=100, thin=5))
    res = cv.cv_crps_grid(tp.field(0), tp.domain, toy_factory(), cfg, tmp_path)
    assert res.lattice.shape == (4, 4) and len(res.lines) == 2
    grid = read_table(tmp_path / "crps_grid.csv")
    assert len(grid) == 16 and list(grid[0]) == ["u_1", "u_2", "crps"]


def test_cv_default_grid_sizes():
    c = cv.CvConfig()
    assert (c.line_points, c.lattice, c.folds) == (200, 30, 10)


def test_cv_lattice_minimum_near_truth():
    tp = ToyProblem(n_field=120)
    cfg = cv.CvConfig(folds=3, line_points=20, mcmc=McmcConfig(iterations=2000, burn_in=500, thin=5))
    res = cv.cv_crps_grid(tp.field(0), tp.domain, toy_factory(), cfg)
    cell = 1.0 / (cfg.lattice - 1)
    assert np.all(np.abs(res.lattice_argmin() - np.array(tp.truth)) <= cell)


# --- timing ------------------------------------------------------------------

def test_timing_smoke(tmp_path):
    cfg = timing.TimingConfig(sizes=(200, 400), repetitions=1, measure="loglik", methods=("vecchia", "dense"))
    rows = timing.timing_sweep(cfg, tmp_path)
    assert len(rows) == 4 and not any(r["censored"] for r in rows)
    assert all(r["total_seconds"] > 0 for r in rows)
    assert (tmp_path / "MANIFEST").exists()


def test_dense_censored_at_large_size():
    cfg = timing.TimingConfig(sizes=(100_000,), repetitions=1, methods=("dense",))
    rows = timing.timing_sweep(cfg)
    assert rows[0]["censored"] and "dense cap" in rows[0]["note"]


def test_runs_axis_shape():
    cfg = timing.TimingConfig(axis="runs", sizes=tuple(range(10, 101, 10)))
    assert cfg.shape(10) == (10, 200) and cfg.shape(100) == (100, 200)
    assert timing.TimingConfig().shape(16_000) == (10, 1600)


def test_sizes_must_ascend():
    with pytest.raises(ValidationError):
        timing.TimingConfig(sizes=(2000, 1000))


def test_slope_helper():
    rows = [{"method": "vecchia", "m": 25, "censored": False, "n_M": n, "total_seconds": 1e-4 * n} for n in
            (1000, 2000, 4000)]
    assert timing.loglog_slope(rows) == pytest.approx(1.0)
