import pytest

from countcal.config import RunConfig, config_from_dict, load_config
from countcal.errors import ValidationError


def test_defaults():
    c = RunConfig()
    assert (c.seed, c.threads, c.surrogate.m) == (0, 1, 25)
    mc = c.mcmc.to_config(c.seed)
    assert (mc.iterations, mc.burn_in, mc.thin) == (10_000, 1_000, 10)


def test_load_resolves_relative_paths(tmp_path):
    (tmp_path / "run.yaml").write_text(
        "seed: 5\nthreads: 2\npaths:\n  field: data/f.csv\n  out_dir: /abs/out\n"
        "surrogate:\n  m: 30\nmcmc:\n  iterations: 500\n  burn_in: 100\n  proposal_sd: [0.1, 0.2]\n"
    )
    c = load_config(tmp_path / "run.yaml")
    assert c.seed == 5 and c.threads == 2 and c.surrogate.m == 30
    assert c.path("field") == tmp_path / "data/f.csv"
    assert str(c.path("out_dir")) == "/abs/out"
    assert c.mcmc.to_config(c.seed).proposal_sd == (0.1, 0.2)


@pytest.mark.parametrize("doc", [
    {"sed": 1}, {"paths": {"feild": "x"}}, {"mcmc": {"iters": 3}}, {"seed": -1}, {"seed": 2**64},
    {"threads": 0}, {"mcmc": {"iterations": 10, "burn_in": 20}}, {"surrogate": {"m": 0}}, {"paths": []},
])
def test_rejects_bad_documents(doc):
    with pytest.raises(ValidationError):
        config_from_dict(doc)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "nope.yaml")


def test_overrides_and_require(tmp_path):
    c = RunConfig().with_overrides(seed=3, field=tmp_path / "f.csv", out_dir=tmp_path / "o")
    assert c.seed == 3
    with pytest.raises(ValidationError, match="does not exist"):
        c.require("field")
    assert c.require("out_dir") == tmp_path / "o"
    with pytest.raises(ValidationError, match="no surrogate"):
        c.require("surrogate")
