"""Command line interface: fit, predict, grid, kernel-dump, spectrum, benchmark.

Exit codes: 0 success, 1 validation problem (bad flags, bad files, shape
mismatches), 2 numerical failure (factorization breakdown, diverged
optimization). The machine-readable result goes to stdout; progress and
diagnostics go to stderr.

The numeric stack is imported inside the command handlers, not at module
level: BLAS pools size themselves when numpy first loads, so the
SPECTRAL_RFF_THREADS cap has to reach the environment before that.
"""

import argparse
import os
import sys

from .errors import InvalidSpec, NumericalError, SchemaMismatch, SpectralRffError

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

# public mode tokens -> trainer mode names
_MODE_TOKENS = {
    "stationary-fixed": "stationary_fixed",
    "stationary": "stationary_learned",
    "nonstationary": "nonstationary_learned",
}

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

_BENCHMARKS = ("chirp", "step-lengthscale", "stock-csv")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; route that to the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _log(message):
    print(message, file=sys.stderr)


def apply_thread_cap(environ=os.environ):
    """Copy SPECTRAL_RFF_THREADS into the BLAS thread-count variables."""
    cap = environ.get("SPECTRAL_RFF_THREADS")
    if cap is None or cap == "":
        return
    try:
        value = int(cap)
    except ValueError:
        value = 0
    if value < 1:
        raise InvalidSpec(f"SPECTRAL_RFF_THREADS must be a positive integer, "
                          f"got {cap!r}")
    for var in _THREAD_VARS:
        environ[var] = str(value)


def _split_names(token):
    names = [part.strip() for part in token.split(",") if part.strip()]
    if not names:
        raise InvalidSpec(f"no column names in {token!r}")
    return names


def _resolve_columns(path, inputs, output_col):
    """Pick input/output columns from flags, defaulting from the header."""
    from .data import csv_header
    from .errors import MissingColumn

    header = csv_header(path)
    out = output_col if output_col is not None else header[-1]
    if out not in header:
        raise MissingColumn(f"output column {out!r} not in {header}")
    if inputs is not None:
        cols = _split_names(inputs)
    else:
        cols = [c for c in header if c != out]
    if not cols:
        raise InvalidSpec("no input columns left after removing the output")
    return cols, out


def _load_dataset(args):
    from .data import load_csv

    cols, out = _resolve_columns(args.data, args.inputs, args.output_col)
    return load_csv(args.data, cols, out)


def _parse_named_measure(token, dim):
    from . import measures

    name, _, rest = token.partition(":")
    values = [float(v) for v in rest.split(",") if v.strip()] if rest else []

    def per_dim(vals, default):
        if not vals:
            return (default,) * dim
        if len(vals) == 1:
            return (vals[0],) * dim
        return tuple(vals)

    if name == "se":
        return measures.GaussianSE(per_dim(values, 1.0))
    if name == "laplacian":
        return measures.LaplacianCauchy(per_dim(values, 1.0))
    if name == "matern":
        if not values:
            raise InvalidSpec("matern needs a smoothness value, e.g. matern:1.5")
        return measures.MaternT(values[0], values[1] if len(values) > 1 else 1.0)
    if name == "student-t":
        if not values:
            raise InvalidSpec("student-t needs degrees of freedom, e.g. student-t:0.5")
        return measures.student_t_spec(values[0], values[1] if len(values) > 1 else 1.0)
    raise InvalidSpec(f"unknown spectral measure {token!r}; expected "
                      f"se[:l1,..], laplacian[:s1,..], matern:lam[,scale], "
                      f"student-t:dof[,scale] or a JSON file")


def _resolve_spec(token, dim):
    """Map a --spec value to a measure, a frequency bank, or None."""
    import json

    from . import measures

    if token is None:
        return None
    if os.path.exists(token) or token.endswith(".json"):
        with open(token, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict) and "omega1" in doc:
            return measures.bank_from_json_dict(doc)
        return measures.spec_from_json_dict(doc)
    return _parse_named_measure(token, dim)


def _outdir(args):
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _out(args, name):
    return os.path.join(args.out_dir, name)


def _metrics_line(mse, corr):
    return f"mse={format(mse, '.17g')} corr={format(corr, '.17g')}"


def cmd_fit(args):
    from . import data, model
    from .benchmarks import metrics
    from .training import TrainConfig, train

    dataset = _load_dataset(args)
    train_ds, test_ds = data.split(dataset, args.split, args.seed)
    train_std, stats = data.standardize(train_ds)
    config = TrainConfig(mode=_MODE_TOKENS[args.mode], m=args.m,
                         learning_rate=args.lr, max_steps=args.max_steps,
                         patience=args.patience, eval_every=args.eval_every,
                         validation_fraction=args.val_frac,
                         dropout_sigma_p=args.sigma_p, seed=args.seed)
    spec_init = _resolve_spec(args.spec, train_std.dim)
    _log(f"fit: {dataset.n} rows, dim {dataset.dim}, mode {args.mode}, m {args.m}")
    state, trace = train(train_std, config, spec_init=spec_init)
    state.standardization = stats
    mean_std, var_std = model.predict(state, data.standardize_inputs(test_ds.x, stats))
    mean, _ = data.destandardize_predictions(mean_std, var_std, stats)
    mse, corr = metrics(test_ds.y, mean)
    _outdir(args)
    model.save_model(_out(args, "model.json"), state)
    trace.to_csv(_out(args, "trace.csv"))
    _log(f"fit: stopped after {len(trace.train_neg_lml)} steps ({trace.stop_reason})")
    print(_metrics_line(mse, corr))
    return 0


def cmd_predict(args):
    from . import data, model

    state = model.load_model(args.model)
    header = data.csv_header(args.data)
    if args.inputs is not None:
        cols = _split_names(args.inputs)
    elif state.input_columns and all(c in header for c in state.input_columns):
        cols = list(state.input_columns)
    else:
        cols = list(header)
    x = data.read_table(args.data, cols)
    if x.shape[1] != state.bank.dim:
        raise SchemaMismatch(f"model expects {state.bank.dim} input columns, "
                             f"file provides {x.shape[1]}")
    xs = x
    if state.standardization is not None:
        xs = data.standardize_inputs(x, state.standardization)
    mean, var = model.predict(state, xs)
    if state.standardization is not None:
        mean, var = data.destandardize_predictions(mean, var, state.standardization)
    _outdir(args)
    data.write_predictions_csv(_out(args, "predictions.csv"), x, mean, var, cols)
    _log(f"predict: wrote {x.shape[0]} rows")
    return 0


def _parse_grid(token):
    from .data import GridSpec

    mins, maxs, counts = [], [], []
    for part in token.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise InvalidSpec(f"grid axis {part!r} is not min:max:count")
        mins.append(float(bits[0]))
        maxs.append(float(bits[1]))
        counts.append(int(bits[2]))
    return GridSpec(tuple(mins), tuple(maxs), tuple(counts))


def cmd_grid(args):
    from . import data, model

    state = model.load_model(args.model)
    spec = _parse_grid(args.grid)
    if len(spec.counts) != state.bank.dim:
        raise SchemaMismatch(f"model expects {state.bank.dim} grid axes, "
                             f"got {len(spec.counts)}")
    x = data.make_grid(spec)
    xs = x
    if state.standardization is not None:
        xs = data.standardize_inputs(x, state.standardization)
    mean, var = model.predict(state, xs)
    if state.standardization is not None:
        mean, var = data.destandardize_predictions(mean, var, state.standardization)
    cols = state.input_columns or [f"x{i + 1}" for i in range(state.bank.dim)]
    _outdir(args)
    data.write_predictions_csv(_out(args, "grid.csv"), x, mean, var, cols)
    if len(spec.counts) == 2:
        data.write_pgm(_out(args, "mean.pgm"), mean.reshape(spec.counts))
        data.write_pgm(_out(args, "variance.pgm"), var.reshape(spec.counts))
    _log(f"grid: wrote {x.shape[0]} rows")
    return 0


def _parse_anchors(token):
    points = []
    for part in token.split(";"):
        part = part.strip()
        if not part:
            continue
        points.append([float(v) for v in part.split(",")])
    if not points:
        raise InvalidSpec("no anchor points given")
    width = len(points[0])
    if any(len(p) != width for p in points):
        raise InvalidSpec("anchor points disagree in dimension")
    return points


def cmd_kernel_dump(args):
    import numpy as np

    from . import data, model
    from .data import GridSpec
    from .features import KernelScale, features_for_mode, kernel_cross

    state = model.load_model(args.model)
    anchors = _parse_anchors(args.anchors)
    d = state.bank.dim
    if len(anchors[0]) != d:
        raise SchemaMismatch(f"model expects {d}-dimensional anchors, "
                             f"got {len(anchors[0])}")
    if args.count < 2:
        raise InvalidSpec("count must be at least 2")
    if not args.window > 0:
        raise InvalidSpec("window must be positive")
    scale = KernelScale(state.hyper.sigma_f2, state.mode)
    _outdir(args)
    for idx, anchor in enumerate(anchors):
        a = np.asarray(anchor, dtype=float)
        spec = GridSpec(a - args.window, a + args.window, (args.count,) * d)
        grid = data.make_grid(spec)
        pts = np.vstack([a.reshape(1, -1), grid])
        if state.standardization is not None:
            pts = data.standardize_inputs(pts, state.standardization)
        phi = features_for_mode(pts, state.bank, state.mode)
        phi_a = type(phi)(phi.phi[:1], phi.m, phi.mode)
        phi_g = type(phi)(phi.phi[1:], phi.m, phi.mode)
        field = kernel_cross(phi_a, phi_g, scale)[0]
        mat = field.reshape(spec.counts) if d > 1 else field.reshape(1, -1)
        data.write_matrix_csv(_out(args, f"kernel_anchor{idx}.csv"), mat)
        data.write_pgm(_out(args, f"kernel_anchor{idx}.pgm"), mat)
    _log(f"kernel-dump: wrote {len(anchors)} anchor fields")
    return 0


def cmd_spectrum(args):
    from . import data, measures
    from .linalg import seeded_rng

    spec = _resolve_spec(args.spec, args.dim)
    if spec is None or isinstance(spec, measures.FrequencyBank):
        raise InvalidSpec("spectrum needs a named measure or a measure JSON file")
    rng = seeded_rng(args.seed)
    if args.pairs:
        bank = measures.sample_nonstationary(spec, spec, args.m, args.dim, rng)
    else:
        bank = measures.sample_stationary(spec, args.m, args.dim, rng)
    _outdir(args)
    measures.save_bank(_out(args, "bank.json"), bank)
    data.write_matrix_csv(_out(args, "omega1.csv"), bank.omega1)
    if not bank.stationary:
        data.write_matrix_csv(_out(args, "omega2.csv"), bank.omega2)
    _log(f"spectrum: sampled {bank.m} frequencies in dimension {bank.dim}")
    return 0


def cmd_benchmark(args):
    from . import benchmarks

    if args.name == "chirp":
        spec = benchmarks.SyntheticSpec("chirp", n=args.n or 600,
                                        noise=args.noise, seed=args.seed)
        bench = benchmarks.gen_chirp(spec)
        configs = benchmarks.chirp_arm_configs(args.m or 600,
                                               max_steps=args.max_steps or 450,
                                               sigma_p=args.sigma_p)
    elif args.name == "step-lengthscale":
        spec = benchmarks.SyntheticSpec("step-lengthscale", n=args.n or 700,
                                        noise=args.noise, seed=args.seed)
        bench = benchmarks.gen_step_lengthscale(spec)
        configs = benchmarks.step_field_arm_configs(args.m or 100,
                                                    max_steps=args.max_steps or 300,
                                                    sigma_p=args.sigma_p)
    else:
        if args.data is None:
            raise InvalidSpec("benchmark stock-csv needs --data with a local CSV")
        bench = _load_dataset(args)
        configs = benchmarks.chirp_arm_configs(args.m or 600,
                                               max_steps=args.max_steps or 450,
                                               sigma_p=args.sigma_p)
    _log(f"benchmark {args.name}: {bench.n} rows, {args.runs} runs")
    report = benchmarks.compare(bench, args.runs, configs,
                                train_fraction=args.split)
    _outdir(args)
    report.to_csv(_out(args, "report.csv"))
    for arm in report.arms:
        print(f"mode={arm} " + _metrics_line(report.mean_mse(arm),
                                             report.mean_corr(arm)))
    return 0


def _add_out_dir(p):
    p.add_argument("--out-dir", default=".", help="directory for output files")


def _add_data_flags(p, required):
    p.add_argument("--data", required=required, help="CSV data file")
    p.add_argument("--inputs", default=None,
                   help="comma-separated input columns (default: every "
                        "column except the output)")
    p.add_argument("--output-col", default=None,
                   help="output column (default: last column)")


def build_parser():
    parser = _Parser(prog="spectral-rff",
                     description="Reduced-rank Gaussian process regression "
                                 "with trainable random Fourier features.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("fit", help="train a model and score a held-out split")
    _add_data_flags(p, required=True)
    p.add_argument("--mode", default="nonstationary", choices=sorted(_MODE_TOKENS))
    p.add_argument("--m", type=int, default=100,
                   help="frequencies per bank (pairs count once)")
    p.add_argument("--spec", default=None,
                   help="initial measure, e.g. se:0.3 or matern:1.5, or a "
                        "JSON file; default: Gaussian with median-heuristic "
                        "lengthscales")
    p.add_argument("--sigma-p", type=float, default=0.05,
                   help="Gaussian dropout level on frequencies")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--split", type=float, default=0.7,
                   help="training fraction of the train/test split")
    p.add_argument("--seed", type=int, default=0)
    _add_out_dir(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict mean and variance for a CSV")
    p.add_argument("--model", required=True, help="model JSON from fit")
    p.add_argument("--data", required=True, help="CSV with input columns")
    p.add_argument("--inputs", default=None,
                   help="comma-separated input columns (default: the "
                        "model's training columns)")
    _add_out_dir(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grid", help="predict over a dense axis-aligned grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True,
                   help="per-axis min:max:count, comma separated, "
                        "e.g. 0:1:100,0:1:100")
    _add_out_dir(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("kernel-dump",
                       help="export the learned covariance around anchor points")
    p.add_argument("--model", required=True)
    p.add_argument("--anchors", required=True,
                   help="semicolon-separated points, e.g. 0.2,0.2;0.8,0.5")
    p.add_argument("--window", type=float, default=0.5,
                   help="half-width of the window around each anchor")
    p.add_argument("--count", type=int, default=33, help="grid points per axis")
    _add_out_dir(p)
    p.set_defaults(func=cmd_kernel_dump)

    p = sub.add_parser("spectrum", help="sample a frequency bank from a measure")
    p.add_argument("--spec", required=True,
                   help="named measure or measure JSON file")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--pairs", action="store_true",
                   help="sample an independent second set for the "
                        "nonstationary map")
    p.add_argument("--seed", type=int, default=0)
    _add_out_dir(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("benchmark",
                       help="stationary vs nonstationary comparison report")
    p.add_argument("name", choices=_BENCHMARKS)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--n", type=int, default=None,
                   help="synthetic dataset size (generator default if omitted)")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--m", type=int, default=None,
                   help="stationary bank size; the learned arm gets m/2 pairs")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--sigma-p", type=float, default=0.05)
    p.add_argument("--split", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    _add_data_flags(p, required=False)
    _add_out_dir(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    try:
        apply_thread_cap()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except NumericalError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (SpectralRffError, OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
