"""Command-line entry point.

Every subcommand writes into an output directory (``--out-dir``, default
``countcal-out``) holding its CSV/YAML results, a ``config_echo`` with the
resolved settings and a ``MANIFEST`` of file hashes. Exit codes: 0 success,
2 invalid input, 3 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import (
    FieldDataset, ParameterDomain, SimulatorCorpus, load_domain, load_field_csv, load_simulator_csv,
    stack, unit_to_latlon, write_domain, write_field_csv, write_simulator_csv,
)
from .diagnostics import randomized_pit, write_pit_csv
from .errors import CountcalError, NumericalError, ValidationError
from .experiments import cv as cv_mod
from .experiments import holdout as holdout_mod
from .experiments import synth as synth_mod
from .experiments import testbed
from .experiments import timing as timing_mod
from .experiments import toy as toy_mod
from .experiments.output import OutputDir, write_table
from .inversion import CalibrationProblem, DiscrepancySpec, field_inputs, metropolis_calibrate
from .seeding import substream
from .vecchia import VecchiaSurrogate, fit_vecchia

log = logging.getLogger("countcal")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64
DEFAULT_OUT = "countcal-out"


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def size_list(text: str) -> list[int]:
    """``a,b,c`` or ``A..B`` (step A) or ``A..B:S``."""
    if ".." not in text:
        return int_list(text)
    try:
        lo, rest = text.split("..", 1)
        hi, step = rest.split(":", 1) if ":" in rest else (rest, lo)
        lo, hi, step = int(float(lo)), int(float(hi)), int(float(step))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size range {text!r}") from None
    if step < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad size range {text!r}")
    return list(range(lo, hi + 1, step))


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="YAML run configuration (default: none)")
    p.add_argument("--seed", type=int, metavar="N", default=d, help="master seed, 64-bit unsigned (default: 0)")
    p.add_argument("--threads", type=int, metavar="N", default=d,
                   help="worker processes for independent cells (default: 1)")
    p.add_argument("--out-dir", metavar="PATH", default=d, help=f"output directory (default: {DEFAULT_OUT})")


def _mcmc_flags(p):
    g = p.add_argument_group("sampler (defaults from the config mcmc section)")
    g.add_argument("--iterations", type=int, help="total iterations T (default: 10000)")
    g.add_argument("--burn-in", type=int, help="burn-in B (default: 1000)")
    g.add_argument("--thin", type=int, help="thinning k (default: 10)")
    g.add_argument("--proposal-sd", type=float_list,
                   help="initial random-walk sd(s), normalized units; one value or one per parameter (default: 0.05)")
    g.add_argument("--target-rate", type=float, help="acceptance target for burn-in adaptation (default: 0.30)")
    g.add_argument("--no-adapt", action="store_true", help="keep proposal sds fixed during burn-in")


def _corpus_flags(p, n_grid: int, n_runs: int | None = None):
    g = p.add_argument_group("simulator corpus (the synthetic testbed unless --simulator is given)")
    g.add_argument("--simulator", metavar="PATH", help="simulator CSV")
    g.add_argument("--domain", metavar="PATH", help="parameter domain YAML (required with --simulator)")
    g.add_argument("--n-grid", type=int, default=n_grid, help=f"testbed grid points (default: {n_grid})")
    if n_runs is not None:
        g.add_argument("--n-runs", type=int, default=n_runs, help=f"testbed runs (default: {n_runs})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = _Parser(prog="countcal", description="Poisson Bayesian inversion with Scaled Vecchia GP surrogates.")
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"countcal {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit a Scaled Vecchia surrogate to simulator output",
                       description="Fit a Scaled Vecchia surrogate; writes surrogate.npz and fit_report.yaml.")
    p.add_argument("--simulator", metavar="PATH", help="simulator CSV (or paths.simulator)")
    p.add_argument("--domain", metavar="PATH", help="parameter domain YAML (or paths.domain)")
    p.add_argument("--m", type=int, help="conditioning-set size (default: 25)")
    p.add_argument("--budget", type=int, help="likelihood evaluations per optimizer stage (default: 500)")
    p.add_argument("--output", metavar="PATH", help="surrogate file (default: OUT_DIR/surrogate.npz)")

    p = sub.add_parser("predict", parents=[common], help="predict a rate map at given parameters",
                       description="Surrogate mean and sd at one parameter vector; writes predictions.csv.")
    p.add_argument("--surrogate", metavar="PATH", help="surrogate file (or paths.surrogate)")
    p.add_argument("--params", type=float_list, required=True, help="parameter vector in raw units, comma-separated")
    p.add_argument("--field", metavar="PATH", help="predict at these field locations instead of the training grid")

    p = sub.add_parser("calibrate", parents=[common], help="calibrate parameters to field counts",
                       description="Metropolis-within-Gibbs calibration; writes posterior.csv and summary.")
    p.add_argument("--surrogate", metavar="PATH", help="surrogate file (or paths.surrogate)")
    p.add_argument("--field", metavar="PATH", help="field CSV (or paths.field)")
    p.add_argument("--domain", metavar="PATH", help="parameter domain YAML (default: the one stored in the surrogate)")
    p.add_argument("--discrepancy", choices=["none", "multiplicative"], default="none",
                   help="add a multiplicative discrepancy delta with log(delta) ~ N(0, 1) (default: none)")
    p.add_argument("--likelihood", choices=["poisson", "gaussian"], default="poisson",
                   help="field likelihood (default: poisson)")
    p.add_argument("--pit", action="store_true", help="also write pit.csv at the posterior mean")
    _mcmc_flags(p)

    p = sub.add_parser("synth", parents=[common], help="synthetic data, recovery grids and discrepancy sweeps",
                       description="Without --recovery/--delta: write one synthetic field dataset. "
                                   "--recovery: hold-out truth recovery grid. --delta: discrepancy sweep.")
    _corpus_flags(p, n_grid=300)
    p.add_argument("--truth", type=int, help="design row used as u* (default: first interior row)")
    p.add_argument("--truths", type=int_list, help="design rows for --recovery (default: all interior rows)")
    p.add_argument("--recovery", action="store_true", help="run the truth-recovery grid")
    p.add_argument("--delta", type=float_list, help="discrepancy values; with several values runs a sweep")
    p.add_argument("--n-field", type=int, default=400, help="field locations (default: 400)")
    p.add_argument("--exposure", type=float, default=60.0, help="median exposure in seconds (default: 60)")
    p.add_argument("--background", type=float, default=0.005, help="typical background rate (default: 0.005)")
    p.add_argument("--m", type=int, help="conditioning-set size (default: 25)")
    p.add_argument("--budget", type=int, help="optimizer budget per stage (default: 500)")
    _mcmc_flags(p)

    p = sub.add_parser("holdout", parents=[common], help="hold-one-run-out surrogate benchmark",
                       description="Fit on all runs but one, predict the held-out map, score RMSE/CRPS.")
    _corpus_flags(p, n_grid=500, n_runs=20)
    p.add_argument("--m", type=int_list, help="conditioning-set sizes, comma-separated (default: 25)")
    p.add_argument("--methods", default="vecchia,dense", help="comma-separated subset of vecchia,dense (default: both)")
    p.add_argument("--dense-cap", type=int, help="largest n_M for the dense GP (default: 4000)")
    p.add_argument("--dense-hypers", choices=["vecchia", "mle"], default="vecchia",
                   help="dense GP hyperparameters: reuse the Vecchia fit or maximize exactly (default: vecchia)")
    p.add_argument("--held-out", type=int_list, help="run indices to hold out (default: all)")
    p.add_argument("--budget", type=int, help="optimizer budget per stage (default: 500)")

    p = sub.add_parser("cv", parents=[common], help="cross-validated CRPS surfaces",
                       description="k-fold CV over field locations; writes crps_grid.csv and per-parameter lines.")
    p.add_argument("--surrogate", metavar="PATH", help="surrogate file (or paths.surrogate)")
    p.add_argument("--field", metavar="PATH", help="field CSV (or paths.field)")
    p.add_argument("--domain", metavar="PATH", help="parameter domain YAML (default: stored in the surrogate)")
    p.add_argument("--folds", type=int, default=10, help="number of folds (default: 10)")
    p.add_argument("--line-points", type=int, default=200, help="points per parameter line (default: 200)")
    p.add_argument("--lattice", type=int, default=30, help="lattice points per axis (default: 30)")
    _mcmc_flags(p)

    p = sub.add_parser("bench", parents=[common], help="timing sweeps",
                       description="Mean wall time per size; sizes as a,b,c or A..B (step A) or A..B:S.")
    p.add_argument("--axis", choices=["response", "runs"], default="response",
                   help="vary total response size n_M at fixed runs, or the number of runs (default: response)")
    p.add_argument("--sizes", type=size_list, default=None,
                   help="ascending sizes (default: 1000,2000,4000,8000,16000 for response; 10..100 for runs)")
    p.add_argument("--m", type=int_list, default=[25], help="conditioning-set sizes (default: 25)")
    p.add_argument("--methods", default="vecchia", help="comma-separated subset of vecchia,dense (default: vecchia)")
    p.add_argument("--repetitions", type=int, default=5, help="repetitions per cell (default: 5)")
    p.add_argument("--measure", choices=["fit", "loglik"], default="fit",
                   help="time fit+predict, or likelihood+predict at fixed hyperparameters (default: fit)")
    p.add_argument("--fixed", type=int, help="runs (response axis, default 10) or grid points (runs axis, default 200)")
    p.add_argument("--timeout", type=float, default=600.0, help="per-repetition limit in seconds (default: 600)")
    p.add_argument("--budget", type=int, default=100, help="optimizer budget per stage for --measure fit (default: 100)")
    p.add_argument("--dense-cap", type=int, help="largest n_M for the dense GP (default: 4000)")

    p = sub.add_parser("toy", parents=[common], help="end-to-end run on the two-parameter toy problem",
                       description="Fit a surrogate to toy simulator runs, simulate field counts and calibrate.")
    p.add_argument("--truth", type=float_list, default=[0.35, 0.6], help="true (u1, u2) (default: 0.35,0.6)")
    p.add_argument("--n-runs", type=int, default=20, help="simulator runs (default: 20)")
    p.add_argument("--n-grid", type=int, default=30, help="grid points per run (default: 30)")
    p.add_argument("--n-field", type=int, default=60, help="field observations (default: 60)")
    p.add_argument("--exposure", type=float, default=5.0, help="exposure per observation (default: 5)")
    p.add_argument("--m", type=int, help="conditioning-set size (default: 25)")
    p.add_argument("--budget", type=int, help="optimizer budget per stage (default: 500)")
    _mcmc_flags(p)
    return parser


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    paths = {"out_dir": getattr(args, "out_dir", None)}
    for key in ("field", "simulator", "domain", "surrogate"):
        paths[key] = getattr(args, key, None)
    cfg = cfg.with_overrides(seed=getattr(args, "seed", None), threads=getattr(args, "threads", None), **paths)
    if cfg.path("out_dir") is None:
        cfg = cfg.with_overrides(out_dir=DEFAULT_OUT)
    return cfg


def mcmc_config(args, cfg: RunConfig, chain: int = 0):
    from dataclasses import replace

    block = cfg.mcmc
    over = {}
    for flag, key in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin"),
                      ("target_rate", "target_rate")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "proposal_sd", None):
        sd = args.proposal_sd
        over["proposal_sd"] = sd[0] if len(sd) == 1 else tuple(sd)
    if getattr(args, "no_adapt", False):
        over["adapt"] = False
    return replace(block, **over).to_config(cfg.seed, chain)


def _m(args, cfg):
    return int(args.m) if getattr(args, "m", None) is not None else int(cfg.surrogate.m)


def _budget(args, cfg):
    return int(args.budget) if getattr(args, "budget", None) is not None else int(cfg.surrogate.budget)


def load_surrogate(cfg: RunConfig, domain_path=None) -> tuple[VecchiaSurrogate, ParameterDomain]:
    model = VecchiaSurrogate.load(cfg.require("surrogate"))
    if domain_path is not None or model.domain is None:
        if cfg.path("domain") is None:
            raise ValidationError("the surrogate file stores no parameter domain; pass --domain")
        domain = load_domain(cfg.require("domain"))
    else:
        domain = model.domain
    ns = model.n_spatial
    if domain.p != model.data.d - ns or \
            not np.allclose(domain.lower, model.normalization.lower[ns:]) or \
            not np.allclose(domain.upper, model.normalization.upper[ns:]):
        raise ValidationError("parameter domain does not match the surrogate")
    return model, domain


def load_corpus(args, cfg: RunConfig, random_runs: int | None = None) -> tuple[SimulatorCorpus, bool]:
    """User corpus from --simulator/--domain, or the synthetic testbed.
    Returns (corpus, is_testbed)."""
    if cfg.path("simulator") is not None:
        return load_simulator_csv(cfg.require("simulator"), load_domain(cfg.require("domain"))), False
    if random_runs is not None:
        return testbed.random_corpus(random_runs, args.n_grid, cfg.seed), True
    return testbed.make_corpus(args.n_grid), True


def finish(od: OutputDir, echo: dict) -> None:
    od.echo_config(echo)
    od.write_manifest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args, cfg: RunConfig) -> int:
    domain = load_domain(cfg.require("domain"))
    corpus = load_simulator_csv(cfg.require("simulator"), domain)
    od = OutputDir(cfg.require("out_dir"))
    m, budget = _m(args, cfg), _budget(args, cfg)
    t0 = time.perf_counter()
    model = fit_vecchia(stack(corpus), m, budget)
    wall = time.perf_counter() - t0
    out = Path(args.output) if args.output else od.file("surrogate.npz")
    model.save(out, domain)
    report = {"kernel": model.spec.to_dict(), "loglik": model.log_likelihood(), "m": m, "budget": budget,
              "n_runs": corpus.n_runs, "n_grid": corpus.n_grid, "surrogate": str(out),
              **model.fit_report}
    od.write_yaml("fit_report.yaml", report)
    od.write_yaml("timing.yaml", {"fit_seconds": wall})
    finish(od, {"command": "fit", **cfg.to_dict(), "m": m, "budget": budget})
    print(f"surrogate written to {out} (log-likelihood {report['loglik']:.6g}, {wall:.1f}s)")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    model, domain = load_surrogate(cfg, getattr(args, "domain", None))
    u = np.asarray(args.params, dtype=float)
    if u.size != domain.p or not domain.contains(u)[0]:
        raise ValidationError(f"--params needs {domain.p} values inside the domain {domain.to_dict()}")
    u_norm = domain.normalize(u)
    if cfg.path("field") is not None:
        fd = load_field_csv(cfg.require("field"))
        X = field_inputs(fd)
        coords = fd.coords
    else:
        X = np.asarray(model.data.grid)
        coords = model.normalization.denormalize(
            np.hstack([X, np.zeros((X.shape[0], domain.p))]))[:, : model.n_spatial]
    pred = model.predict(np.hstack([X, np.tile(u_norm, (X.shape[0], 1))]))
    rows = []
    spherical = coords.shape[1] == 3 and np.allclose(np.linalg.norm(coords, axis=1), 1.0, atol=1e-9)
    if spherical:
        lat, lon = unit_to_latlon(coords)
    for i in range(X.shape[0]):
        r = {"index": i}
        if spherical:
            r.update({"lat_deg": float(lat[i]), "lon_deg": float(lon[i])})
        else:
            r.update({f"x_{k + 1}": float(coords[i, k]) for k in range(coords.shape[1])})
        r.update({"mean": float(pred.means[i]), "sd": float(pred.sds[i])})
        rows.append(r)
    od = OutputDir(cfg.require("out_dir"))
    write_table(od.file("predictions.csv"), rows)
    finish(od, {"command": "predict", **cfg.to_dict(), "params": u.tolist()})
    return EXIT_OK


def _calibrate_problem(args, cfg, field_data: FieldDataset, model, domain):
    disc = DiscrepancySpec() if getattr(args, "discrepancy", "none") == "multiplicative" else None
    return CalibrationProblem.from_surrogate(field_data, model, domain,
                                             likelihood=getattr(args, "likelihood", "poisson"), discrepancy=disc)


def cmd_calibrate(args, cfg: RunConfig) -> int:
    model, domain = load_surrogate(cfg, args.domain)
    fd = load_field_csv(cfg.require("field"))
    prob = _calibrate_problem(args, cfg, fd, model, domain)
    mc = mcmc_config(args, cfg)
    od = OutputDir(cfg.require("out_dir"))
    t0 = time.perf_counter()
    post = metropolis_calibrate(prob, mc)
    wall = time.perf_counter() - t0
    post.write_csv(od.file("posterior.csv"))
    post.write_summary(od.file("summary"))
    if args.pit:
        u_bar = post.u_norm.mean(axis=0)
        delta = float(post.delta.mean()) if post.delta is not None else 1.0
        rates = prob.model.rates(u_bar)
        means = np.maximum(rates * delta + fd.backgrounds, 1e-10) * fd.exposures
        pit = randomized_pit(fd.counts, means, substream(cfg.seed, "pit"))
        write_pit_csv(od.file("pit.csv"), pit, {"seed": cfg.seed, "at": "posterior mean"})
    od.write_yaml("timing.yaml", {"mcmc_seconds": wall})
    finish(od, {"command": "calibrate", **cfg.to_dict(), "discrepancy": args.discrepancy,
                "likelihood": args.likelihood, "pit": bool(args.pit), "mcmc_resolved": mc.to_dict()})
    if post.warning:
        print(f"warning: {post.warning}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    corpus, is_testbed = load_corpus(args, cfg)
    truth_fn = testbed.skymap_rates if is_testbed else None
    interior = testbed.interior_runs(corpus)
    od_path = cfg.require("out_dir")
    sched = testbed.field_schedule(args.n_field, cfg.seed, args.exposure, background=args.background)
    if not is_testbed:
        # without a truth function the field must sit on grid points
        idx = substream(cfg.seed, "synth-grid").choice(corpus.n_grid, min(args.n_field, corpus.n_grid), replace=False)
        idx.sort()
        sched = testbed.FieldSchedule(corpus.grid[idx], sched.exposures[: idx.size], sched.backgrounds[: idx.size])
    rc = synth_mod.RecoveryConfig(m=_m(args, cfg), budget=_budget(args, cfg), mcmc=mcmc_config(args, cfg),
                                  seed=cfg.seed, workers=cfg.threads)
    echo = {"command": "synth", **cfg.to_dict(), "n_field": args.n_field, "testbed": is_testbed,
            "n_grid": corpus.n_grid, "n_runs": corpus.n_runs}
    if args.recovery:
        truths = args.truths if args.truths else interior.tolist()
        rep = synth_mod.run_recovery_grid(corpus, truths, sched, rc, truth_fn, od_path)
        print(f"joint coverage {rep.coverage.joint:.3f} over {rep.coverage.n} truths")
        return EXIT_OK
    truth = args.truth if args.truth is not None else (int(interior[0]) if interior.size else 0)
    if not 0 <= truth < corpus.n_runs:
        raise ValidationError(f"--truth must index a design row (0..{corpus.n_runs - 1})")
    if args.delta and len(args.delta) > 1:
        rep = synth_mod.discrepancy_sweep(corpus, truth, args.delta, sched, rc, truth_fn, od_path)
        n_cov = sum(int(r["delta_covered"]) for r in rep.rows)
        print(f"delta covered in {n_cov}/{len(rep.rows)}; u* jointly covered in "
              f"{sum(int(r['joint_covered']) for r in rep.rows)}/{len(rep.rows)}")
        return EXIT_OK
    delta = args.delta[0] if args.delta else 1.0
    syn = synth_mod.synth_generate(corpus, corpus.designs[truth], sched.exposures, sched.backgrounds, cfg.seed,
                                   sched.directions, truth_fn, delta)
    od = OutputDir(od_path)
    write_field_csv(od.file("field.csv"), syn.field)
    od.write_yaml("truth.yaml", {"run": int(truth), "run_id": corpus.run_ids[truth],
                                 "u_star": {n: float(v) for n, v in zip(corpus.domain.names, syn.u_star)},
                                 "delta": delta, "seed": cfg.seed})
    if is_testbed:
        # the training corpus without the truth run, ready for `countcal fit`
        write_simulator_csv(od.file("simulator.csv"), synth_mod.training_without(corpus, truth))
        write_domain(od.file("domain.yaml"), corpus.domain)
    finish(od, {**echo, "truth": int(truth), "delta": delta})
    return EXIT_OK


def cmd_holdout(args, cfg: RunConfig) -> int:
    corpus, _ = load_corpus(args, cfg, random_runs=args.n_runs)
    hc = holdout_mod.HoldoutConfig(
        m_values=tuple(args.m or [cfg.surrogate.m]), methods=tuple(m for m in args.methods.split(",") if m),
        budget=_budget(args, cfg), dense_cap=args.dense_cap or cfg.surrogate.dense_cap,
        dense_hypers=args.dense_hypers, held_out=tuple(args.held_out) if args.held_out else None,
        workers=cfg.threads,
    )
    rows = holdout_mod.holdout_benchmark(corpus, hc, cfg.require("out_dir"))
    for r in holdout_mod.summarize(rows):
        print(f"{r['method']:8s} m={r['m']!s:4s} rmse={r['rmse']:.4g} crps={r['crps']:.4g} cells={r['cells']}")
    return EXIT_OK


def cmd_cv(args, cfg: RunConfig) -> int:
    model, domain = load_surrogate(cfg, args.domain)
    fd = load_field_csv(cfg.require("field"))
    cc = cv_mod.CvConfig(folds=args.folds, line_points=args.line_points, lattice=args.lattice,
                         mcmc=mcmc_config(args, cfg), seed=cfg.seed, workers=cfg.threads)
    res = cv_mod.cv_crps_grid(fd, domain, cv_mod.surrogate_factory(model), cc, cfg.require("out_dir"))
    best = domain.denormalize(res.lattice_argmin())
    print("lattice CRPS minimum at " + ", ".join(f"{n}={v:.6g}" for n, v in zip(domain.names, best)))
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    sizes = args.sizes or ([1000, 2000, 4000, 8000, 16000] if args.axis == "response" else list(range(10, 101, 10)))
    tc = timing_mod.TimingConfig(
        axis=args.axis, sizes=tuple(sizes), m_values=tuple(args.m), methods=tuple(m for m in args.methods.split(",") if m),
        repetitions=args.repetitions, measure=args.measure, fixed=args.fixed, budget=args.budget,
        dense_cap=args.dense_cap or cfg.surrogate.dense_cap, timeout=args.timeout, seed=cfg.seed,
    )
    rows = timing_mod.timing_sweep(tc, cfg.require("out_dir"))
    for m in tc.m_values:
        try:
            x = "n_M" if args.axis == "response" else "n_runs"
            print(f"vecchia m={m}: log-log slope {timing_mod.loglog_slope(rows, 'vecchia', int(m), x):.3f}")
        except ValidationError:
            pass
    return EXIT_OK


def cmd_toy(args, cfg: RunConfig) -> int:
    tp = toy_mod.ToyProblem(truth=tuple(args.truth), n_runs=args.n_runs, n_grid=args.n_grid,
                            n_field=args.n_field, exposure=args.exposure)
    data = tp.stacked(cfg.seed)
    model = fit_vecchia(data, _m(args, cfg), _budget(args, cfg))
    fd = tp.field(cfg.seed)
    prob = CalibrationProblem.from_surrogate(fd, model, tp.domain)
    post = metropolis_calibrate(prob, mcmc_config(args, cfg))
    od = OutputDir(cfg.require("out_dir"))
    post.write_csv(od.file("posterior.csv"))
    post.write_summary(od.file("summary"))
    write_table(od.file("field.csv"),
                [{"x": float(x), "exposure_s": float(e), "count": int(y), "background_rate": float(b)}
                 for x, e, y, b in zip(fd.coords[:, 0], fd.exposures, fd.counts, fd.backgrounds)])
    hpd = post.hpd()
    rows = [{"parameter": n, "truth": t, "mean": float(post.u[:, k].mean()), "lower": h.lower, "upper": h.upper,
             "covered": h.contains(t)} for k, (n, t, h) in enumerate(zip(tp.domain.names, tp.truth, hpd))]
    od.write_metrics(rows)
    finish(od, {"command": "toy", **cfg.to_dict(), "truth": list(tp.truth), "n_runs": tp.n_runs,
                "n_grid": tp.n_grid, "n_field": tp.n_field, "exposure": tp.exposure,
                "kernel": model.spec.to_dict()})
    print("; ".join(f"{r['parameter']}: truth {r['truth']} in [{r['lower']:.4g}, {r['upper']:.4g}]"
                    f"{'' if r['covered'] else ' (NOT covered)'}" for r in rows))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "calibrate": cmd_calibrate, "synth": cmd_synth,
            "holdout": cmd_holdout, "cv": cmd_cv, "bench": cmd_bench, "toy": cmd_toy}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help/--version exit 0; usage errors exit 64
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("countcal: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except NumericalError as exc:
        print(f"countcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CountcalError, ValueError, OSError) as exc:
        print(f"countcal: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
