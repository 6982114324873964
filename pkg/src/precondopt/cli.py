"""Command-line harness: generate data, diagnose conditioning, build
preconditioners, run solvers, and sweep comparison grids.

Subcommands: gen, diagnose, precond, solve, compare, validate.
Exit codes: 0 success, 2 usage, 3 divergence, 4 I/O or format, 5 resource.

Every flag can also be supplied through ``--config file`` holding plain
``key=value`` lines (flags win on conflict).  The default output directory
comes from $PRECONDOPT_OUTDIR when set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import datagen, figures, precond, problems, solvers, spectral
from .errors import (
    DivergedError,
    FormatError,
    InputError,
    PrecondError,
    ResourceError,
)
from .losses import loss_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_RESOURCE = 5

COMPARE_HEADER = "run_id,algorithm,formulation,epoch,objective,suboptimality"
DIAGNOSE_HEADER = ("dataset,loss,lambda,beta,mode,m,rho,R_sq,gamma,mu,"
                   "kappa_original,kappa_precond,cond1,cond2,m_min")

_FORMULATIONS = ("original", "full", "naive", "sampled")


def _default_outdir() -> str:
    return os.environ.get("PRECONDOPT_OUTDIR", ".")


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise FormatError(f"{path}: line {lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _load_dataset(path, fmt="auto", map01=False, target_range=None):
    if fmt == "auto":
        try:
            with open(path, "rb") as fh:
                magic = fh.read(4)
        except OSError as exc:
            raise FormatError(f"cannot read {path}: {exc}") from exc
        if magic == datagen.MAGIC:
            fmt = "binary"
        elif str(path).endswith(".csv"):
            fmt = "csv"
        else:
            fmt = "sparse"
    if fmt == "binary":
        return datagen.load_binary(path)
    if fmt == "csv":
        return datagen.load_dense_csv(path, map01_labels=map01, target_range=target_range)
    return datagen.load_sparse_text(path, map01_labels=map01, target_range=target_range)


def _parse_target_range(text):
    if text is None:
        return None
    lo, sep, hi = text.partition(":")
    if not sep:
        raise InputError("--target-range expects lo:hi")
    return float(lo), float(hi)


def _check_full_budget(d: int, limit: int):
    if d > limit:
        raise ResourceError(
            f"dense spectral work for d={d} exceeds the budget (--max-full-dim {limit}); "
            "use sampled preconditioning instead (precond --m / diagnose --mode sampled "
            "after reducing dimension)"
        )


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    ds = datagen.synth(args.n, args.d, args.decay, task=args.task, seed=args.seed,
                       allow_wide=args.allow_wide)
    out = args.out or os.path.join(args.out_dir, f"synth-{args.decay.replace(':', '_')}-{args.seed}.bin")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    digest = datagen.save_binary(ds, out)
    with open(out + ".provenance", "w") as fh:
        for k, v in {**ds.provenance, "digest": digest}.items():
            fh.write(f"{k}={v}\n")
    print(f"wrote {out} (d={ds.d}, n={ds.n}, task={ds.task}, digest={digest})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    ds = _load_dataset(args.data, args.format, args.map01, _parse_target_range(args.target_range))
    _check_full_budget(ds.d, args.max_full_dim)
    loss = loss_model(args.loss)
    spec = spectral.covariance_spectrum(ds.X, right_factors=True)
    report = spectral.condition_report(
        ds.X, loss, args.lam, args.beta, r=args.r, mode=args.mode, m=args.m,
        spectrum=spec,
    )
    m_star, rho_hat = precond.resolve_sample_size(spec, args.lam, args.beta,
                                                  args.delta, args.t)
    mug_at_star = (spectral.coherence(spec, rho_hat)
                   * spectral.numerical_rank(spec, rho_hat))

    print(f"dataset        d={ds.d} n={ds.n} digest={ds.digest}")
    print(f"loss           {loss.kind} (L={loss.L:g}, smooth={loss.smooth})")
    print(f"lambda         {report.lam:g}")
    print(f"beta           {report.beta:g}")
    print(f"mode           {report.mode}" + (f" (m={report.m})" if report.m else ""))
    print(f"rho            {report.rho:.6g}")
    print(f"R_sq           {report.R_sq:.6g}")
    print(f"gamma          {report.gamma:.6g}")
    print(f"mu             {report.mu:.6g}")
    print(f"kappa_original {report.kappa_original:.6g}")
    print(f"kappa_precond  {report.kappa_precond:.6g}")
    print(f"reduction      {report.reduction:.6g}")
    print(f"cond1          {'holds' if report.cond1_holds else 'fails'} (r={report.r:.6g})")
    print(f"cond2          {'holds' if report.cond2_holds else 'fails'}")
    if report.degenerate:
        print("note           kappa_precond hit the degenerate L == beta case (floored)")
    print(f"m_min          {m_star} (delta={args.delta:g}, t={args.t:g}, "
          f"mu*gamma@rho_hat={mug_at_star:.4g})")
    if args.m is not None:
        need = precond.sample_size_bound(args.delta, args.t, mug_at_star, 1.0, ds.d)
        print(f"m_check        m={args.m} {'satisfies' if args.m >= need else 'is below'} "
              f"the certified bound {need}")

    if args.csv:
        new = not os.path.exists(args.csv)
        with open(args.csv, "a") as fh:
            if new:
                fh.write(DIAGNOSE_HEADER + "\n")
            fh.write(
                f"{ds.digest},{loss.kind},{report.lam:.8g},{report.beta:.8g},"
                f"{report.mode},{report.m or ''},{report.rho:.8g},{report.R_sq:.8g},"
                f"{report.gamma:.8g},{report.mu:.8g},{report.kappa_original:.8g},"
                f"{report.kappa_precond:.8g},{int(report.cond1_holds)},"
                f"{int(report.cond2_holds)},{m_star}\n"
            )
    if args.plot:
        os.makedirs(args.out_dir, exist_ok=True)
        png = os.path.join(args.out_dir, "diagnose.png")
        figures.plot_condition_sweep(
            spec, report.R_sq, loss, args.lam, png,
            title=f"{loss.kind}, lambda={args.lam:g}",
        )
        print(f"wrote {png}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# precond
# ---------------------------------------------------------------------------

def cmd_precond(args) -> int:
    ds = _load_dataset(args.data, args.format, args.map01, _parse_target_range(args.target_range))
    t0 = time.perf_counter()
    if args.m is not None:
        P = precond.build_sampled(ds.X, args.lam, args.beta, args.m, seed=args.seed)
    else:
        _check_full_budget(ds.d, args.max_full_dim)
        P = precond.build_full(ds.X, args.lam, args.beta)
    transformed = precond.precondition_dataset(P, ds.X)
    p_time = time.perf_counter() - t0

    out = args.out or os.path.join(args.out_dir, "preconditioned.bin")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    out_ds = datagen.Dataset(X=transformed, y=ds.y, task=ds.task,
                             provenance={"kind": "preconditioned", "source": str(args.data)})
    digest = datagen.save_binary(out_ds, out)
    precond.save_preconditioner(P, out + ".precond.npz")
    print(f"p-time={p_time:.6f}")
    print(f"wrote {out} (mode={P.mode}, rho={P.rho:.6g}, m={P.m}, digest={digest})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve / compare
# ---------------------------------------------------------------------------

def _build_problem(ds, loss, formulation, lam, beta, m, precond_seed):
    if formulation == "original":
        return problems.original_problem(ds, loss, lam), None
    if formulation == "full":
        P = precond.build_full(ds.X, lam, beta)
        return problems.full_precond_problem(ds, loss, P), P
    if formulation == "naive":
        P = precond.build_naive(ds.X, lam, beta)
        return problems.naive_precond_problem(ds, loss, P), P
    if formulation == "sampled":
        if m is None:
            raise InputError("sampled formulation needs --m")
        P = precond.build_sampled(ds.X, lam, beta, m, seed=precond_seed)
        return problems.sampled_precond_problem(ds, loss, P), P
    raise InputError(f"unknown formulation {formulation!r}; expected one of {_FORMULATIONS}")


def _reference_with_disk_cache(problem, cache_dir):
    key = (f"{problem.digest}|{problem.formulation}|{problem.loss.kind}|"
           f"{problem.reg!r}|{problem.shift_beta!r}|{problem.lam!r}")
    name = hashlib.blake2b(key.encode(), digest_size=8).hexdigest() + ".json"
    path = os.path.join(cache_dir, name) if cache_dir else None
    if path and os.path.exists(path):
        with open(path, "r") as fh:
            blob = json.load(fh)
        return float(blob["value"])
    _, value = solvers.reference_optimum(problem)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w") as fh:
            json.dump({"key": key, "value": value}, fh)
    return value


def _solver_config(args, algorithm, seed):
    return solvers.SolverConfig(
        algorithm=algorithm,
        epochs=args.epochs,
        seed=seed,
        step_rule=args.step_rule,
        step_param=args.step_param,
        svrg_inner=args.svrg_inner,
        eval_every=args.eval_every,
        stop_at=args.stop_at,
        r_audit=args.r_audit,
    )


def cmd_solve(args) -> int:
    ds = _load_dataset(args.data, args.format, args.map01, _parse_target_range(args.target_range))
    loss = loss_model(args.loss)
    problem, _ = _build_problem(ds, loss, args.formulation, args.lam, args.beta,
                                args.m, args.precond_seed)
    reference = None
    if not args.no_reference:
        cache = os.path.join(args.out_dir, ".refcache")
        reference = _reference_with_disk_cache(problem, cache)

    config = _solver_config(args, args.algorithm, args.seed)
    tag = args.tag or f"{args.algorithm}-{args.formulation}-s{args.seed}"
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, tag + ".csv")
    meta_path = os.path.join(args.out_dir, tag + ".meta")

    code = EXIT_OK
    try:
        trace = solvers.run_solver(problem, config, reference)
    except DivergedError as exc:
        trace = exc.trace
        trace.metadata["diverged"] = True
        print(f"diverged: {exc}", file=sys.stderr)
        code = EXIT_DIVERGED
    trace.metadata.setdefault("diverged", False)
    solvers.write_trace_csv(trace, csv_path)
    solvers.write_trace_metadata(trace, meta_path)
    print(f"wrote {csv_path}")
    if args.plot:
        png = os.path.join(args.out_dir, tag + ".png")
        figures.plot_trace_csv(csv_path, png, label=tag)
        print(f"wrote {png}")
    return code


def _compare_worker(payload):
    run_id, problem, config, reference = payload
    try:
        trace = solvers.run_solver(problem, config, reference)
        return run_id, trace, EXIT_OK, ""
    except DivergedError as exc:
        exc.trace.metadata["diverged"] = True
        return run_id, exc.trace, EXIT_DIVERGED, str(exc)
    except PrecondError as exc:
        return run_id, None, EXIT_USAGE, str(exc)


def cmd_compare(args) -> int:
    ds = _load_dataset(args.data, args.format, args.map01, _parse_target_range(args.target_range))
    loss = loss_model(args.loss)
    formulations = [f.strip() for f in args.formulations.split(",") if f.strip()]
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    m_list = [int(m) for m in args.m_list.split(",")] if args.m_list else [args.m or 100]
    if not formulations or not algorithms:
        raise InputError("compare needs at least one formulation and one algorithm")

    os.makedirs(args.out_dir, exist_ok=True)
    cache = os.path.join(args.out_dir, ".refcache")

    # One problem (and one reference solve) per formulation variant, shared
    # across the whole grid.
    variants = []
    for form in formulations:
        ms = m_list if form == "sampled" else [None]
        for m in ms:
            problem, _ = _build_problem(ds, loss, form, args.lam, args.beta,
                                        m, args.precond_seed)
            reference = _reference_with_disk_cache(problem, cache)
            variants.append((form, m, problem, reference))

    jobs = []
    for form, m, problem, reference in variants:
        for algorithm in algorithms:
            for seed in seeds:
                run_id = f"{algorithm}-{form}" + (f"-m{m}" if m else "") + f"-s{seed}"
                jobs.append((run_id, problem, _solver_config(args, algorithm, seed), reference))

    workers = args.workers or os.cpu_count() or 1
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_compare_worker, jobs))
    else:
        results = [_compare_worker(job) for job in jobs]

    combined = os.path.join(args.out_dir, args.tag + ".csv")
    worst = EXIT_OK
    with open(combined, "w") as fh:
        fh.write(COMPARE_HEADER + "\n")
        for (run_id, trace, code, message) in results:
            worst = max(worst, code)
            if trace is None:
                print(f"run {run_id} failed: {message}", file=sys.stderr)
                continue
            algorithm, _, _ = run_id.partition("-")
            formulation = trace.metadata["formulation"]
            solvers.write_trace_csv(trace, os.path.join(args.out_dir, run_id + ".csv"))
            solvers.write_trace_metadata(trace, os.path.join(args.out_dir, run_id + ".meta"))
            for e, o, s in zip(trace.epochs, trace.objectives, trace.suboptimalities):
                fh.write(f"{run_id},{algorithm},{formulation},{e:.17g},{o:.17g},{s:.17g}\n")
            if message:
                print(f"run {run_id}: {message}", file=sys.stderr)
    print(f"wrote {combined} ({len(results)} runs)")
    if not args.no_plot:
        png = os.path.join(args.out_dir, args.tag + ".png")
        figures.plot_compare_csv(combined, png, title=f"{loss.kind}, lambda={args.lam:g}")
        print(f"wrote {png}")
    return worst


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _validate_trace_rows(rows, label, errors):
    last = None
    for e, o in rows:
        if last is not None and e <= last:
            errors.append(f"{label}: epochs not strictly increasing at {e:g}")
        last = e
        if not math.isfinite(o):
            errors.append(f"{label}: non-finite objective at epoch {e:g}")


def cmd_validate(args) -> int:
    errors = []
    for path in args.paths:
        try:
            with open(path, "r") as fh:
                header = fh.readline().strip()
        except OSError as exc:
            errors.append(f"{path}: {exc}")
            continue
        try:
            if header == solvers.TRACE_HEADER:
                trace = solvers.read_trace_csv(path)
                _validate_trace_rows(zip(trace.epochs, trace.objectives), path, errors)
            elif header == COMPARE_HEADER:
                per_run: dict[str, list] = {}
                with open(path, "r") as fh:
                    fh.readline()
                    for lineno, line in enumerate(fh, start=2):
                        line = line.strip()
                        if not line:
                            continue
                        parts = line.split(",")
                        if len(parts) != 6:
                            errors.append(f"{path}: line {lineno}: expected 6 fields")
                            continue
                        try:
                            epoch, obj = float(parts[3]), float(parts[4])
                            float(parts[5])
                        except ValueError:
                            errors.append(f"{path}: line {lineno}: non-numeric field")
                            continue
                        per_run.setdefault(parts[0], []).append((epoch, obj))
                for run_id, rows in per_run.items():
                    _validate_trace_rows(rows, f"{path}[{run_id}]", errors)
            elif header == DIAGNOSE_HEADER:
                numeric = (2, 3, 6, 7, 8, 9, 10, 11, 14)
                with open(path, "r") as fh:
                    fh.readline()
                    for lineno, line in enumerate(fh, start=2):
                        line = line.strip()
                        if not line:
                            continue
                        parts = line.split(",")
                        if len(parts) != 15:
                            errors.append(f"{path}: line {lineno}: expected 15 fields")
                            continue
                        try:
                            for col in numeric:
                                float(parts[col])
                        except ValueError:
                            errors.append(f"{path}: line {lineno}: non-numeric field")
            else:
                errors.append(f"{path}: unknown header {header!r}")
        except PrecondError as exc:
            errors.append(str(exc))
    for err in errors:
        print(err, file=sys.stderr)
    print(f"validated {len(args.paths)} file(s), {len(errors)} error(s)")
    return EXIT_OK if not errors else EXIT_IO


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_dataset_args(p):
    p.add_argument("--data", required=True, help="dataset path (binary, CSV, or sparse text)")
    p.add_argument("--format", choices=("auto", "binary", "csv", "sparse"), default="auto")
    p.add_argument("--map01", action="store_true", help="map {0,1} labels to {-1,+1}")
    p.add_argument("--target-range", default=None, help="affine-map targets lo:hi onto [0,1]")


def _add_problem_args(p):
    p.add_argument("--loss", choices=("square", "logistic", "poisson"), default="square")
    p.add_argument("--lam", type=float, required=True, help="regularization strength")
    p.add_argument("--beta", type=float, default=0.99, help="curvature shift of the loss")
    p.add_argument("--m", type=int, default=None, help="sample count for the sampled preconditioner")
    p.add_argument("--precond-seed", type=int, default=0)


def _add_solver_args(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-rule", choices=("inverse_t", "constant", "one_over_ltilde", "c_over_rsq"),
                   default=None)
    p.add_argument("--step-param", type=float, default=None)
    p.add_argument("--svrg-inner", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--stop-at", type=float, default=None,
                   help="stop once suboptimality reaches this value")
    p.add_argument("--r-audit", type=float, default=None,
                   help="warn if |prediction| ever exceeds this bound")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="precondopt",
        description="Data preconditioning for regularized loss minimization.",
    )
    parser.add_argument("--config", default=None, help="key=value file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--decay", required=True, help="poly:TAU or exp:TAU")
    p.add_argument("--task", choices=("regression", "binary", "count"), default="regression")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allow-wide", action="store_true", help="permit d > n")
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=_default_outdir())
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("diagnose", help="condition-number report")
    _add_dataset_args(p)
    _add_problem_args(p)
    p.add_argument("--r", type=float, default=None, help="prediction bound (default R/sqrt(lam))")
    p.add_argument("--mode", choices=("full", "sampled", "identity"), default="full")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--t", type=float, default=3.0)
    p.add_argument("--csv", default=None, help="append one CSV row here")
    p.add_argument("--plot", action="store_true",
                   help="render the condition-number sweep figure")
    p.add_argument("--out-dir", default=_default_outdir())
    p.add_argument("--max-full-dim", type=int, default=8192)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("precond", help="build a preconditioner and transform the data")
    _add_dataset_args(p)
    _add_problem_args(p)
    p.add_argument("--seed", type=int, default=0, help="sampling seed (alias of --precond-seed)")
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=_default_outdir())
    p.add_argument("--max-full-dim", type=int, default=8192)
    p.set_defaults(func=cmd_precond)

    p = sub.add_parser("solve", help="run one solver and emit a trace CSV")
    _add_dataset_args(p)
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--formulation", choices=_FORMULATIONS, default="original")
    p.add_argument("--algorithm", choices=("sgd", "asg", "sag", "svrg"), default="svrg")
    p.add_argument("--no-reference", action="store_true",
                   help="skip the reference optimum (suboptimality becomes nan)")
    p.add_argument("--out-dir", default=_default_outdir())
    p.add_argument("--tag", default=None)
    p.add_argument("--plot", action="store_true", help="render the trace figure")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="run a formulation x algorithm grid")
    _add_dataset_args(p)
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--formulations", default="original,full")
    p.add_argument("--algorithms", default="svrg,sag")
    p.add_argument("--m-list", default=None, help="comma list of m for sampled runs")
    p.add_argument("--seeds", default=None, help="comma list of solver seeds")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", default=_default_outdir())
    p.add_argument("--tag", default="compare")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="schema-check emitted CSV files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)

    # Config file pre-pass: values become defaults, explicit flags win.
    if "--config" in argv:
        at = argv.index("--config")
        try:
            cfg = _read_config_file(argv[at + 1])
        except IndexError:
            parser.error("--config needs a path")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        for subparser in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
            for act in subparser._actions:  # noqa: SLF001
                if act.dest not in cfg:
                    continue
                raw = cfg[act.dest]
                if isinstance(act, argparse._StoreTrueAction):  # noqa: SLF001
                    value = raw.lower() in ("1", "true", "yes")
                elif act.type is not None:
                    value = act.type(raw)
                else:
                    value = raw
                subparser.set_defaults(**{act.dest: value})

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.func(args)
    except (InputError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
