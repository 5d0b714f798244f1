import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from countcal.data import (
    FieldDataset, ParameterDomain, SimulatorCorpus, latlon_to_unit, load_domain, load_field_csv,
    load_simulator_csv, stack, unit_to_latlon, write_domain, write_field_csv, write_simulator_csv,
)
from countcal.errors import StructuralError, ValidationError
from countcal.experiments import testbed

DOM = ParameterDomain(("mfp", "ratio"), [500.0, 0.001], [3000.0, 0.1])


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- spherical coordinates ---------------------------------------------------

def test_origin_maps_to_x_axis():
    np.testing.assert_allclose(latlon_to_unit(0.0, 0.0), [1.0, 0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("lon", [0.0, 45.0, 200.0, -120.0])
def test_north_pole(lon):
    np.testing.assert_allclose(latlon_to_unit(90.0, lon), [0.0, 0.0, 1.0], atol=1e-15)


def test_lon_90_is_y_axis():
    np.testing.assert_allclose(latlon_to_unit(0.0, 90.0), [0.0, 1.0, 0.0], atol=1e-15)


def test_latlon_round_trip():
    lat, lon = unit_to_latlon(latlon_to_unit(-30.0, 240.0))
    assert abs(lat - (-30.0)) < 1e-9 and abs(lon - 240.0) < 1e-9


@given(st.floats(-89.9, 89.9), st.floats(0.0, 359.99))
def test_latlon_round_trip_property(lat, lon):
    v = latlon_to_unit(lat, lon)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    la, lo = unit_to_latlon(v)
    assert abs(la - lat) < 1e-9
    assert min(abs(lo - lon), 360 - abs(lo - lon)) < 1e-9


def test_latitude_out_of_range():
    with pytest.raises(ValidationError):
        latlon_to_unit(91.0, 0.0)


# --- field files -------------------------------------------------------------

HDR = "lat_deg,lon_deg,exposure_s,count,background_rate\n"


def test_single_row_field(tmp_path):
    fd = load_field_csv(write(tmp_path, "f.csv", HDR + "0,0,100.0,7,0.05\n"))
    assert fd.n == 1
    np.testing.assert_allclose(fd.coords[0], [1, 0, 0], atol=1e-15)
    assert fd.counts[0] == 7 and fd.exposures[0] == 100.0 and fd.backgrounds[0] == 0.05


def test_zero_exposure_rejected(tmp_path):
    with pytest.raises(ValidationError, match="exposure"):
        load_field_csv(write(tmp_path, "f.csv", HDR + "0,0,0,7,0.05\n"))


@pytest.mark.parametrize("row", ["0,0,10,-1,0.0", "0,0,10,2.5,0.0", "0,0,10,3,-0.1", "95,0,10,3,0", "0,0,nan,3,0"])
def test_bad_rows_rejected(tmp_path, row):
    with pytest.raises(ValidationError):
        load_field_csv(write(tmp_path, "f.csv", HDR + row + "\n"))


def test_bad_header(tmp_path):
    with pytest.raises(ValidationError, match="header"):
        load_field_csv(write(tmp_path, "f.csv", "a,b,c\n1,2,3\n"))


def test_three_rows_counts_exact(tmp_path):
    text = HDR + "10,20,50.5,0,0.01\n-45,300,75.25,12,0.002\n89.5,10,1e3,123456789,0\n"
    fd = load_field_csv(write(tmp_path, "f.csv", text))
    assert fd.n == 3
    assert fd.counts.tolist() == [0, 12, 123456789]
    assert fd.exposures.tolist() == [50.5, 75.25, 1000.0]


def test_comments_and_blank_lines(tmp_path):
    fd = load_field_csv(write(tmp_path, "f.csv", "# note\n" + HDR + "\n0,0,1,1,0\n\n"))
    assert fd.n == 1


@pytest.mark.parametrize("layout", ["unit", "latlon"])
def test_field_round_trip(tmp_path, layout):
    sch = testbed.field_schedule(25, 3)
    fd = testbed.schedule_field(sch).with_counts(np.arange(25))
    write_field_csv(tmp_path / "f.csv", fd, layout)
    back = load_field_csv(tmp_path / "f.csv")
    assert np.array_equal(back.counts, fd.counts)
    assert np.array_equal(back.exposures, fd.exposures)
    assert np.array_equal(back.backgrounds, fd.backgrounds)
    if layout == "unit":
        assert np.array_equal(back.coords, fd.coords)
    else:
        np.testing.assert_allclose(back.coords, fd.coords, atol=1e-12)


def test_field_arrays_frozen():
    fd = FieldDataset([[1.0, 0, 0]], [1], [1.0], [0.0])
    with pytest.raises(ValueError):
        fd.counts[0] = 5


def test_subset_and_with_counts():
    sch = testbed.field_schedule(10, 0)
    fd = testbed.schedule_field(sch)
    sub = fd.subset([1, 3])
    assert sub.n == 2 and np.array_equal(sub.exposures, fd.exposures[[1, 3]])
    with pytest.raises(ValidationError):
        fd.with_counts(np.arange(9))


# --- domain ------------------------------------------------------------------

def test_normalize_lower_bound():
    assert DOM.normalize([500.0, 0.001]).tolist() == [0.0, 0.0]
    assert DOM.normalize([3000.0, 0.1]).tolist() == [1.0, 1.0]


@pytest.mark.parametrize("lo,hi", [([1.0], [1.0]), ([2.0], [1.0]), ([0.0], [np.inf])])
def test_domain_needs_lower_below_upper(lo, hi):
    with pytest.raises(ValidationError):
        ParameterDomain(("a",), lo, hi)


def test_domain_file_round_trip(tmp_path):
    write_domain(tmp_path / "d.yaml", DOM)
    back = load_domain(tmp_path / "d.yaml")
    assert back.names == DOM.names
    assert np.array_equal(back.lower, DOM.lower) and np.array_equal(back.upper, DOM.upper)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_normalize_inverse(z):
    z = np.array(z)
    np.testing.assert_allclose(DOM.normalize(DOM.denormalize(z)), z, atol=1e-12)


# --- simulator corpus --------------------------------------------------------

SIM_HDR = "run_id,mfp,ratio,lat_deg,lon_deg,rate\n"


def sim_text(runs, locs):
    lines = [SIM_HDR]
    for rid, u, rates in runs:
        for (la, lo), r in zip(locs, rates):
            lines.append(f"{rid},{u[0]},{u[1]},{la},{lo},{r}\n")
    return "".join(lines)


LOCS = [(0, 0), (10, 20), (-30, 240)]


def test_two_runs_three_points(tmp_path):
    text = sim_text([("a", (600, 0.01), [1, 2, 3]), ("b", (900, 0.02), [4, 5, 6])], LOCS)
    c = load_simulator_csv(write(tmp_path, "s.csv", text), DOM)
    assert (c.n_runs, c.n_grid, c.n_M) == (2, 3, 6)
    assert c.run_ids == ("a", "b")
    assert c.rates.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_conflicting_duplicate_rejected(tmp_path):
    text = sim_text([("a", (600, 0.01), [1, 2, 3])], LOCS) + "a,600,0.01,0,0,9\n"
    with pytest.raises(ValidationError, match="conflicting"):
        load_simulator_csv(write(tmp_path, "s.csv", text), DOM)


def test_inconsistent_run_parameters(tmp_path):
    text = sim_text([("a", (600, 0.01), [1, 2, 3])], LOCS) + "a,700,0.01,5,5,9\n"
    with pytest.raises(ValidationError, match="inconsistent"):
        load_simulator_csv(write(tmp_path, "s.csv", text), DOM)


def test_ragged_grid_is_structural(tmp_path):
    text = sim_text([("a", (600, 0.01), [1, 2, 3]), ("b", (900, 0.02), [4, 5])], LOCS)
    with pytest.raises(StructuralError):
        load_simulator_csv(write(tmp_path, "s.csv", text), DOM)


def test_run_outside_domain(tmp_path):
    text = sim_text([("a", (100, 0.01), [1, 2, 3])], LOCS)
    with pytest.raises(ValidationError, match="outside"):
        load_simulator_csv(write(tmp_path, "s.csv", text), DOM)


def test_large_product_count():
    # the full-scale corpus shape: 66 runs on a 1-degree grid
    c = SimulatorCorpus(DOM, np.tile([[600.0, 0.01]], (66, 1)) + np.arange(66)[:, None] * [1.0, 0.0],
                        testbed.fibonacci_sphere(10), np.zeros((66, 10)))
    assert c.n_runs * 16_200 == 1_069_200


def test_simulator_round_trip(tmp_path):
    c = testbed.make_corpus(40)
    write_simulator_csv(tmp_path / "s.csv", c)
    back = load_simulator_csv(tmp_path / "s.csv", c.domain)
    assert np.array_equal(back.rates, c.rates)
    assert np.array_equal(back.designs, c.designs)
    assert np.array_equal(back.grid, c.grid)


# --- stacking ----------------------------------------------------------------

def test_stack_one_run():
    c = SimulatorCorpus(DOM, [[1000.0, 0.05]], testbed.fibonacci_sphere(4), [[1.0, 2.0, 3.0, 4.0]])
    s = stack(c)
    assert s.n == 4
    assert np.all(s.inputs[:, 3:] == s.inputs[0, 3:])


def test_stack_row_order():
    g = testbed.fibonacci_sphere(2)
    c = SimulatorCorpus(DOM, DOM.denormalize([[0.2, 0.5], [0.8, 0.5]]), g, [[1.0, 2.0], [3.0, 4.0]])
    s = stack(c)
    assert s.responses.tolist() == [1.0, 2.0, 3.0, 4.0]
    np.testing.assert_allclose(s.inputs[:, 3], [0.2, 0.2, 0.8, 0.8])
    assert s.grid_index.tolist() == [0, 1, 0, 1]
    assert s.run_index.tolist() == [0, 0, 1, 1]
    assert np.all((s.inputs >= 0) & (s.inputs <= 1))
