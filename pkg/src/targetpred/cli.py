"""Command-line pipeline: simulate -> fit -> target -> evaluate, plus the
replication harness.

Every command is a pure function of its input files, flags, and --seed;
re-runs produce byte-identical outputs. Exit codes: 0 success, 2 usage or
input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import models
from . import functionals as fx
from . import solver
from . import evaluation as ev
from . import simulation as sim

SCHEMA_TAG = "targetpred-run/v1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    with open(p) as fh:
        return json.load(fh)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, params: dict):
    manifest = {"schema": SCHEMA_TAG, "command": command, "params": params}
    with open(out / "run.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)


def _functional_from_args(args) -> fx.FunctionalSpec:
    if args.functional_json:
        with open(args.functional_json) as fh:
            return fx.FunctionalSpec.from_json_dict(json.load(fh))
    kwargs = {}
    if args.threshold is not None:
        kwargs["threshold"] = args.threshold
    if args.window is not None:
        lo, hi = (float(v) for v in args.window.split(","))
        kwargs["window"] = (lo, hi)
    return fx.FunctionalSpec(kind=args.functional, **kwargs)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = sim.SimConfig(n=args.n, p=args.p, m=args.m, rsnr=args.rsnr,
                        seed=args.seed)
    data, truth = sim.simulate(cfg)
    out = _outdir(args.out)
    models.save_dataset(data, out / "dataset.csv", out / "dataset.json")
    with open(out / "truth.json", "w") as fh:
        json.dump({
            "beta": truth.beta.tolist(),
            "tau_star": truth.tau_star.tolist(),
            "active": truth.active.tolist(),
            "noise_sd": truth.noise_sd,
            "signal_sd": truth.signal_sd,
        }, fh, indent=1)
    _write_manifest(out, "simulate", vars(args) | {"config": None})
    print(f"wrote dataset (n={data.n}, p={data.p}, m={data.m}) to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = models.load_dataset(_require(args.data, "dataset CSV"),
                               _require(args.manifest, "dataset manifest"))
    out = _outdir(args.out)
    if args.model == "conjugate":
        design = models.design_matrix(data.X)
        conj_data = models.Dataset(X=design, Y=data.Y, tau=data.tau)
        model = models.ConjugateLinearModel(
            prior_precision=np.eye(design.shape[1]) * args.prior_precision,
            noise_variance=args.noise_variance)
        posterior = models.fit_conjugate(conj_data, model)
        post = posterior.draws(args.draws, seed=args.seed)
        summary = {"model": "conjugate",
                   "posterior_mean": posterior.mean.tolist()}
    else:
        model = models.FosrModel.bspline(data.tau, L=args.num_basis,
                                         t_dof=args.t_dof)
        post = models.gibbs_fosr(data, model, iters=args.iters,
                                 burnin=args.burnin, seed=args.seed)
        for name, arr in post.params.items():
            if not np.all(np.isfinite(arr)):
                raise ArithmeticError(
                    f"non-finite draws in field {name!r}; the sampler "
                    "diverged (try more burnin or a larger basis)")
        rhat = models.split_rhat(post.params["sigma_eps"])
        summary = {"model": "fosr", "split_rhat_sigma_eps": rhat,
                   "S": post.S, "L": model.num_basis}
    models.save_draws(post, out / "draws.bin", out / "draws.json")
    with open(out / "convergence.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    _write_manifest(out, "fit", vars(args))
    print(f"wrote {post.S} posterior draws to {out}")
    return EXIT_OK


def cmd_target(args) -> int:
    data = models.load_dataset(_require(args.data, "dataset CSV"),
                               _require(args.manifest, "dataset manifest"))
    post = models.load_draws(_require(args.draws_bin, "draw archive"),
                             _require(args.draws_json, "draw sidecar"))
    spec = _functional_from_args(args)
    design = models.design_matrix(data.X)
    func_draws = models.functional_draws(post, design, spec, seed=args.seed)
    hbar = func_draws.mean(axis=0)
    pen_w = solver.adaptive_weights(func_draws, design,
                                    weight_cap=args.weight_cap)
    loss = "cross_entropy" if spec.is_binary else "squared"
    path = solver.lambda_path(hbar, design, pen_w, n_lambda=args.n_lambda,
                              ratio=args.ratio, loss=loss, tol=args.tol)
    out = _outdir(args.out)
    payload = path.to_json_dict()
    payload["functional"] = spec.to_json_dict()
    payload["hbar"] = [float(v) for v in hbar]
    with open(out / "path.json", "w") as fh:
        json.dump(payload, fh, indent=1)
    _write_manifest(out, "target", {k: v for k, v in vars(args).items()
                                    if k != "func"})
    worst = max(f.kkt_residual for f in path.fits)
    print(f"wrote {len(path)} path fits to {out} "
          f"(max KKT residual {worst:.2e})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = models.load_dataset(_require(args.data, "dataset CSV"),
                               _require(args.manifest, "dataset manifest"))
    post = models.load_draws(_require(args.draws_bin, "draw archive"),
                             _require(args.draws_json, "draw sidecar"))
    spec = _functional_from_args(args)
    design = models.design_matrix(data.X)
    loss = "cross_entropy" if spec.is_binary else "squared"

    func_draws = models.functional_draws(post, design, spec, seed=args.seed)
    hbar = func_draws.mean(axis=0)
    pen_w = solver.adaptive_weights(func_draws, design,
                                    weight_cap=args.weight_cap)
    full_path = solver.lambda_path(hbar, design, pen_w,
                                   n_lambda=args.n_lambda, ratio=args.ratio,
                                   loss=loss, tol=args.tol)
    sizes = np.array([len(f.active_set) for f in full_path.fits])

    plan = ev.make_folds(data.n, args.K, seed=args.seed)
    fweights = ev.importance_weights(post, data, plan,
                                     truncate=not args.no_truncate)
    fold_paths = ev.fit_per_fold(plan, fweights, func_draws, design, pen_w,
                                 full_path.lambdas, loss=loss, tol=args.tol)
    sir = ev.sir_indices(fweights, args.R, seed=args.seed,
                         max_fraction=args.sir_max_fraction)
    sir_func = ev.sir_functional_draws(func_draws, sir, plan)
    h_emp = fx.apply_matrix(spec, data.Y, data.tau)
    report = ev.losses(plan, fold_paths, h_emp, sir_func, design,
                       loss_kind=loss, warnings=sir.warnings, sizes=sizes)

    accept = ev.acceptable_set(
        report, ev.AcceptanceConfig(eta=args.eta, epsilon=args.epsilon))
    chosen = ev.simplest_acceptable(accept, report)

    out = _outdir(args.out)
    ev.write_report_json(report, out / "report.json", eta=args.eta)
    ev.write_size_table_csv(report, out / "size_table.csv")
    selected = {
        "eta": args.eta,
        "epsilon": args.epsilon,
        "selected_index": chosen,
        "selected_lambda": float(report.lambdas[chosen]),
        "amin_index": report.amin,
        "amin_lambda": float(report.lambdas[report.amin]),
        "acceptable_indices": accept.indices.tolist(),
        "selected_fit": full_path.fits[chosen].to_json_dict(),
    }
    with open(out / "selected.json", "w") as fh:
        json.dump(selected, fh, indent=1)
    _write_manifest(out, "evaluate", {k: v for k, v in vars(args).items()
                                      if k != "func"})
    print(f"best action: lambda={report.lambdas[report.amin]:.4g} "
          f"(size {report.sizes[report.amin]}); selected simplest "
          f"acceptable: lambda={report.lambdas[chosen]:.4g} "
          f"(size {report.sizes[chosen]})")
    return EXIT_OK


def cmd_replicate(args) -> int:
    cfg = sim.SimConfig(n=args.n, p=args.p, m=args.m, rsnr=args.rsnr,
                        seed=args.seed, replications=args.replications)
    engine = sim.EngineSettings.fast() if args.preset == "fast" \
        else sim.EngineSettings()
    if args.R is not None:
        engine.R = args.R
    if args.gibbs_iters is not None:
        engine.gibbs_iters = args.gibbs_iters
    if args.gibbs_burnin is not None:
        engine.gibbs_burnin = args.gibbs_burnin

    def progress(done, total):
        print(f"replication {done}/{total}", flush=True)

    records = sim.run_study(cfg, engine, progress=progress)
    out = _outdir(args.out)
    sim.write_records_csv(records, out / "metrics.csv")
    sim.write_summary_json(records, out / "summary.json")
    sim.write_epsmax_csv(records, engine.eta_grid, out / "epsmax.csv")
    _write_manifest(out, "replicate", {k: v for k, v in vars(args).items()
                                       if k != "func"})
    eps0 = np.mean([r["eps_max@0"] for r in records])
    print(f"finished {len(records)} replications; mean eps_max(0) = "
          f"{eps0:.3f}; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_functional_flags(p):
    p.add_argument("--functional", default="argmax",
                   choices=[k for k in fx.KINDS if k != "contrast"])
    p.add_argument("--functional-json", default=None,
                   help="JSON file with a full functional spec")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--window", default=None, help="lo,hi for zeros_window")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="targetpred",
        description="Targeted point prediction from Bayesian predictive "
                    "distributions")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker bound for internal parallelism")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = subparsers["simulate"] = sub.add_parser(
        "simulate", help="draw a synthetic dataset")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--rsnr", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = subparsers["fit"] = sub.add_parser(
        "fit", help="fit a model and archive posterior draws")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", choices=["conjugate", "fosr"], default="fosr")
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--burnin", type=int, default=5_000)
    p.add_argument("--draws", type=int, default=5_000,
                   help="draw count for the conjugate model")
    p.add_argument("--num-basis", type=int, default=None)
    p.add_argument("--t-dof", type=float, default=3.0)
    p.add_argument("--prior-precision", type=float, default=1e-3)
    p.add_argument("--noise-variance", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = subparsers["target"] = sub.add_parser(
        "target", help="optimize a lambda path of actions")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--draws-bin", required=True)
    p.add_argument("--draws-json", required=True)
    _add_functional_flags(p)
    p.add_argument("--n-lambda", type=int, default=100)
    p.add_argument("--ratio", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--weight-cap", type=float, default=1e6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_target)

    p = subparsers["evaluate"] = sub.add_parser(
        "evaluate", help="out-of-sample evaluation and selection")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--draws-bin", required=True)
    p.add_argument("--draws-json", required=True)
    _add_functional_flags(p)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--R", type=int, default=1000)
    p.add_argument("--sir-max-fraction", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--n-lambda", type=int, default=100)
    p.add_argument("--ratio", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--weight-cap", type=float, default=1e6)
    p.add_argument("--no-truncate", action="store_true",
                   help="disable importance-weight truncation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = subparsers["replicate"] = sub.add_parser(
        "replicate", help="run the synthetic study")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--rsnr", type=float, default=5.0)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--preset", choices=["fast", "full"], default="fast")
    p.add_argument("--R", type=int, default=None)
    p.add_argument("--gibbs-iters", type=int, default=None)
    p.add_argument("--gibbs-burnin", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replicate)

    for sp in subparsers.values():
        sp.add_argument("--config", default=None,
                        help="JSON config file (flags take precedence)")
    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if "--config" in argv:
            config = _load_config(argv[argv.index("--config") + 1])
            for sp in subparsers.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in config.items()
                                   if k in known})
    except (InputError, json.JSONDecodeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, json.JSONDecodeError,
            models.ModelError, ev.EvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (solver.SolverError, ArithmeticError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
