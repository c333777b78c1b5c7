"""Command-line entry point: ``myoadapt <subcommand> [options]``.

Every subcommand writes its outputs plus ``manifest.json`` (resolved
options, seed, library versions and input digests) under the output
directory. Options can also come from ``--config FILE`` (``key=value``
lines, keys named like the long flags); explicit flags win.

Exit codes: 0 success, 2 usage, 3 input/output, 4 numerical failure.
"""

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import load_model, save_model
from .config import derive_seed, format_kv, parse_kv
from .dataset import (ShiftConfig, SplitPlan, generate_synthetic, load_frames, load_session,
                      preprocess_session, strong_shift_config, write_frames, write_session)
from .dsp import FilterSpec, RmsSpec
from .errors import DataFormatError, InvalidSpecError, NumericalError
from .evaluation import (accuracy_difference_distribution, emit_report, evaluate, format_kpca,
                         kpca_fit, kpca_rows, latency_benchmark)
from .methods import METHODS, PARAMS, make_model
from .modelsel import (DEFAULT_M, GAMMA_GRID, K_GRID, LAMBDA_GRID, M_GRID, Grid, parse_best,
                       provisional_gamma, select)

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4
OUT_ENV = "MYOADAPT_OUT"


class UsageError(Exception):
    pass


def _floats(text):
    text = str(text).strip()
    if text.startswith("log:"):
        lo, hi, n = text[4:].split(":")
        if float(lo) <= 0 or float(hi) <= 0:
            raise argparse.ArgumentTypeError(f"log grid bounds must be positive: {text!r}")
        return tuple(np.logspace(np.log10(float(lo)), np.log10(float(hi)), int(n)).tolist())
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _grid_for(method, args, n_inputs=None):
    axes = {}
    if "lam" in PARAMS[method]:
        axes["lam"] = args.lambda_grid
    if "gamma" in PARAMS[method]:
        axes["gamma"] = args.gamma_grid
        if args.m is not None:
            axes["M"] = (args.m,)
    if "k" in PARAMS[method]:
        axes["k"] = args.k_grid
    return Grid(axes)


def _fixed_params(method, args, X=None):
    """Hyperparameters given explicitly on the command line, or None."""
    wanted = PARAMS[method]
    given = {"lam": args.lam, "gamma": args.gamma, "M": args.m, "k": args.k}
    if args.params:
        with open(args.params) as fh:
            return {k: v for k, v in parse_best(fh.read()).items() if k in wanted}
    if all(given[p] is not None for p in wanted):
        return {p: given[p] for p in wanted}
    return None


# -- I/O helpers ----------------------------------------------------------------

def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _manifest(out, args, inputs):
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
           if k not in ("func",)}
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": args.seed,
        "versions": {
            "myoadapt": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "inputs": {str(p): _digest(p) for p in inputs},
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_any(path, filter_spec, rms_spec):
    """Frames from a ``*.frames.csv`` file, or preprocess a raw session."""
    if str(path).endswith(".frames.csv"):
        return load_frames(path)
    frames, _ = preprocess_session(load_session(path), filter_spec, rms_spec)
    return frames


def _specs(args):
    if args.filter_config:
        with open(args.filter_config) as fh:
            kv = parse_kv(fh.read())
        fkeys = set(FilterSpec.__dataclass_fields__)
        fspec = FilterSpec.from_text(format_kv({k: v for k, v in kv.items() if k in fkeys}))
        rspec = RmsSpec.from_text(format_kv({k: v for k, v in kv.items() if k not in fkeys}))
        return fspec, rspec
    return (FilterSpec(args.notch_hz, args.notch_q, args.band_low, args.band_high, args.order),
            RmsSpec(args.window, args.hop))


# -- subcommands ------------------------------------------------------------------

def cmd_synthesize(args, out):
    if args.shift_config:
        with open(args.shift_config) as fh:
            cfg = ShiftConfig.from_text(fh.read())
    elif args.preset == "strong":
        cfg = strong_shift_config(args.seed, sessions=args.sessions, subject=args.subject)
    else:
        cfg = ShiftConfig(sessions=args.sessions, subject=args.subject, rotation=args.rotation,
                          mean_drift=args.mean_drift, gain_drift=args.gain_drift,
                          seed=args.seed)
    _write(out / "shift.cfg", cfg.to_text())
    for session in generate_synthetic(cfg):
        write_session(out / f"s{session.subject}_day{session.day}.csv", session)
    return []


def cmd_preprocess(args, out):
    fspec, rspec = _specs(args)
    _write(out / "filter.cfg", fspec.to_text() + rspec.to_text())
    for path in args.input:
        session = load_session(path)
        frames, extrema = preprocess_session(session, fspec, rspec)
        stem = Path(path).name.removesuffix(".csv")
        write_frames(out / f"{stem}.frames.csv", frames)
        _write(out / f"{stem}.extrema.csv", extrema.to_text())
    return args.input


def cmd_select(args, out):
    fspec, rspec = _specs(args)
    frames = _load_any(args.input[0], fspec, rspec).select_reps(args.train_reps)
    result = select(frames.X, frames.y, args.method, _grid_for(args.method, args),
                    args.folds, args.seed, M_grid=args.m_grid)
    _write(out / "cv_table.tsv", result.to_tsv())
    _write(out / "best.txt", format_kv(result.best))
    print(format_kv(result.best), end="")
    return args.input


def cmd_train(args, out):
    fspec, rspec = _specs(args)
    frames = _load_any(args.input[0], fspec, rspec).select_reps(args.train_reps)
    params = _fixed_params(args.method, args)
    if params is None:
        params = select(frames.X, frames.y, args.method, _grid_for(args.method, args),
                        args.folds, args.seed, M_grid=args.m_grid).best
    model = make_model(args.method, params, frames.X.shape[1], args.seed).fit(frames.X, frames.y)
    save_model(out / args.model_name, model, args.method)
    _write(out / "params.txt", format_kv(params))
    return args.input + ([args.params] if args.params else [])


def cmd_update(args, out):
    model, method = load_model(args.model)
    if not getattr(model, "incremental", False):
        raise UsageError(f"model {args.model} ({method}) does not support incremental updates")
    fspec, rspec = _specs(args)
    for path in args.input:
        frames = _load_any(path, fspec, rspec).select_reps(args.update_reps)
        model.partial_fit(frames.X, frames.y)
    save_model(out / args.model_name, model, method)
    return [args.model] + args.input


def cmd_evaluate(args, out):
    fspec, rspec = _specs(args)
    sessions = [_load_any(p, fspec, rspec) for p in args.input]
    settings = ("batch", "incremental") if args.setting == "both" else (args.setting,)
    if "incremental" in settings and args.method in ("knn", "lda"):
        raise UsageError(f"method {args.method!r} cannot run in the incremental setting")
    base = args.method.replace("-incr", "") if args.setting == "both" else args.method
    perms = None if args.all_permutations else args.permutations
    runs = evaluate(sessions, base, settings, perms, args.seed,
                    params=_fixed_params(base, args), grid=_grid_for(base, args),
                    folds=args.folds, vote_window=args.vote_window)
    emit_report(runs, out)
    if len(settings) == 2:
        inc = [r for r in runs if r.setting == "incremental"]
        bat = [r for r in runs if r.setting == "batch"]
        diff = accuracy_difference_distribution(inc, bat)
        lines = ["position\tn\tmedian\tmean"]
        for pos in sorted(diff.samples):
            v = diff.samples[pos]
            lines.append(f"{pos + 1}\t{v.size}\t{float(np.median(v))!r}\t{float(v.mean())!r}")
        _write(out / "margin.tsv", "\n".join(lines) + "\n")
    return args.input


def cmd_bench(args, out):
    methods = [m for m in args.methods.split(",") if m]
    if not methods:
        raise UsageError("bench needs at least one method")
    fspec, rspec = _specs(args)
    frames = [_load_any(p, fspec, rspec) for p in args.input]
    X = np.vstack([f.X for f in frames])
    y = np.concatenate([f.y for f in frames])
    rng = np.random.default_rng(derive_seed(args.seed, "bench"))
    idx = rng.permutation(X.shape[0])
    train, test = idx[:args.train_frames], idx[args.train_frames:][:args.test_frames]
    if test.size == 0:
        test = idx[:args.test_frames]
    models = {}
    for m in methods:
        params = {"lam": args.lam or 1.0, "gamma": args.gamma or provisional_gamma(X),
                  "M": args.m or DEFAULT_M, "k": args.k or 1}
        params = {p: params[p] for p in PARAMS.get(m, ())}
        models[m] = make_model(m, params, X.shape[1], args.seed).fit(X[train], y[train])
    stats = latency_benchmark(models, X[test], repeats=args.repeats)
    lines = ["method\tn_train\tn_calls\tmedian_us\tp99_us"]
    for m in methods:
        s = stats[m]
        lines.append(f"{m}\t{train.size}\t{s['n']}\t{s['median_s'] * 1e6:.3f}\t{s['p99_s'] * 1e6:.3f}")
    _write(out / "bench.tsv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return args.input


def cmd_kpca(args, out):
    fspec, rspec = _specs(args)
    sessions = [_load_any(p, fspec, rspec) for p in args.input]
    X = np.vstack([fs.X for fs in sessions])
    model = kpca_fit(X, args.gamma, cap=args.cap, seed=derive_seed(args.seed, "kpca"))
    _write(out / "kpca.tsv", format_kpca(kpca_rows(model, sessions)))
    return args.input


# -- parser -------------------------------------------------------------------------

def _add_signal_flags(p):
    g = p.add_argument_group("preprocessing")
    g.add_argument("--notch-hz", type=float, default=50.0, help="powerline notch (default 50)")
    g.add_argument("--notch-q", type=float, default=30.0, help="notch quality factor (default 30)")
    g.add_argument("--band-low", type=float, default=20.0, help="bandpass low edge Hz (default 20)")
    g.add_argument("--band-high", type=float, default=500.0,
                   help="bandpass high edge Hz (default 500)")
    g.add_argument("--order", type=int, default=4, help="Butterworth order (default 4)")
    g.add_argument("--window", type=int, default=400, help="RMS window samples (default 400)")
    g.add_argument("--hop", type=int, default=100, help="RMS hop samples (default 100)")
    g.add_argument("--filter-config", help="key=value file overriding the flags above")


def _add_model_flags(p, method_required=True):
    g = p.add_argument_group("model")
    g.add_argument("--method", choices=METHODS, required=method_required, default=None,
                   help="classifier id")
    g.add_argument("--lam", type=float, help="fixed regularization (skips the lambda search)")
    g.add_argument("--gamma", type=float, help="fixed RBF coefficient")
    g.add_argument("--m", "--M", dest="m", type=int,
                   help=f"random feature count (default: selected, production size {DEFAULT_M})")
    g.add_argument("--k", type=int, help="fixed kNN neighbours")
    g.add_argument("--params", help="key=value file of fixed hyperparameters (from select)")
    g.add_argument("--lambda-grid", type=_floats, default=LAMBDA_GRID,
                   help="comma list or log:LO:HI:N (default log:1e-4:1e3:50)")
    g.add_argument("--gamma-grid", type=_floats, default=GAMMA_GRID,
                   help="comma list or log:LO:HI:N (default log:5e-4:50:50)")
    g.add_argument("--m-grid", type=_ints, default=M_GRID,
                   help="random feature counts tried when selecting M (default %s)"
                   % ",".join(map(str, M_GRID)))
    g.add_argument("--k-grid", type=_ints, default=K_GRID, help="kNN grid (default 1..49)")
    g.add_argument("--folds", type=int, default=10, help="cross-validation folds (default 10)")


def build_parser():
    parser = argparse.ArgumentParser(prog="myoadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--out", default=os.environ.get(OUT_ENV, "out"),
                       help=f"output directory (env {OUT_ENV}; default ./out)")
        p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        p.add_argument("--config", help="key=value file of option defaults")
        p.set_defaults(func=func)
        return p

    p = add("synthesize", cmd_synthesize, "generate synthetic multi-day sessions")
    p.add_argument("--preset", choices=("none", "strong"), default="none")
    p.add_argument("--shift-config", help="ShiftConfig key=value file")
    p.add_argument("--sessions", type=int, default=6)
    p.add_argument("--subject", type=int, default=1)
    p.add_argument("--rotation", type=float, default=0.0)
    p.add_argument("--mean-drift", type=float, default=0.0)
    p.add_argument("--gain-drift", type=float, default=0.0)

    p = add("preprocess", cmd_preprocess, "filter, RMS-window and normalize sessions")
    p.add_argument("input", nargs="+", help="session CSV files")
    _add_signal_flags(p)

    p = add("select", cmd_select, "cross-validated hyperparameter search")
    p.add_argument("input", nargs=1, help="session or .frames.csv file")
    p.add_argument("--train-reps", type=_ints, default=(0, 1),
                   help="repetitions used for selection (default 0,1)")
    _add_signal_flags(p)
    _add_model_flags(p)

    p = add("train", cmd_train, "fit a classifier and save it")
    p.add_argument("input", nargs=1, help="session or .frames.csv file")
    p.add_argument("--train-reps", type=_ints, default=(0, 1))
    p.add_argument("--model-name", default="model.npz")
    _add_signal_flags(p)
    _add_model_flags(p)

    p = add("update", cmd_update, "incrementally update a saved RLSC model")
    p.add_argument("input", nargs="+", help="session or .frames.csv files, in order")
    p.add_argument("--model", required=True, help="model file from train/update")
    p.add_argument("--update-reps", type=_ints, default=(0, 1))
    p.add_argument("--model-name", default="model.npz")
    _add_signal_flags(p)

    p = add("evaluate", cmd_evaluate, "batch/incremental protocols over day orderings")
    p.add_argument("input", nargs="+", help="one subject's session or .frames.csv files")
    p.add_argument("--setting", choices=("batch", "incremental", "both"), default="both")
    p.add_argument("--permutations", type=int, default=60,
                   help="day orderings to run, chronological first (default 60)")
    p.add_argument("--all-permutations", action="store_true", help="run every ordering")
    p.add_argument("--vote-window", type=int, default=5,
                   help="majority-vote window in frames (default 5)")
    _add_signal_flags(p)
    _add_model_flags(p)

    p = add("bench", cmd_bench, "single-frame prediction latency")
    p.add_argument("input", nargs="+")
    p.add_argument("--methods", default="rlsc,rf-rlsc,knn,lda")
    p.add_argument("--train-frames", type=int, default=5000)
    p.add_argument("--test-frames", type=int, default=200)
    p.add_argument("--repeats", type=int, default=5)
    _add_signal_flags(p)
    for flag, kind in (("--lam", float), ("--gamma", float), ("--k", int)):
        p.add_argument(flag, type=kind)
    p.add_argument("--m", "--M", dest="m", type=int)

    p = add("kpca", cmd_kpca, "2-D kernel PCA projection rows (x, y, class, day)")
    p.add_argument("input", nargs="+")
    p.add_argument("--gamma", type=float, default=0.05, help="RBF coefficient (default 0.05)")
    p.add_argument("--cap", type=int, default=8000, help="max frames in the kernel matrix")
    _add_signal_flags(p)
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            kv = {k.replace("-", "_"): v for k, v in parse_kv(fh.read()).items()}
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**kv)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs = args.func(args, out)
        _manifest(out, args, inputs)
    except (UsageError, InvalidSpecError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
