"""Command-line interface: ``pvscreen {build-sigma,fit,select,simulate,report}``.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(values are Python literals or bare strings; ``#`` starts a comment). Keys
are the long flag names with ``-`` or ``_``. Flags given on the command line
win over the file. A ``manifest.json`` written by an earlier run is also
accepted as a config, which replays that run.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numeric
failure, 4 non-convergence (some R-hat above 1.1; outputs are still written).

Chains and replicates run in worker processes, at most ``PVSCREEN_MAX_WORKERS``
of them (default: the CPU count). Outputs are written by the parent process
only, each through a temporary file that is renamed into place.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import io
import json
import os
import platform
import sys
import tempfile
import time
import warnings

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .coprescription import (
    METHODS as SIGMA_METHODS,
    build_sigma_d,
    matrix_csv_text,
    min_eigenvalue,
    read_coprescription,
    read_matrix_csv,
    read_n_total,
)
from .data import DataError, load_dataset
from .diagnostics import diagnostics
from .sampler import UPDATES, WORKERS_ENV, SamplerConfig, SamplerError, run_chains, summarize
from .selection import default_alpha_r, select, threshold_curve
from .simulate import (
    DESK_M,
    METHODS,
    MDistribution,
    format_table,
    run_benchmark,
    scenario1_spec,
    scenario2_spec,
    summarize_benchmark,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 1, 2, 3, 4
RHAT_FAIL = 1.1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- file output

def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if np.isnan(x) else f"{float(x):.10g}"
    return str(x)


def csv_text(header, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    return str(o)


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    """Flat ``key = value`` file, or the ``config`` block of a run manifest."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        obj = json.loads(text)
        return dict(obj.get("config", obj))
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    out = {}
    for k, v in cp["run"].items():
        try:
            out[k] = ast.literal_eval(v)
        except (ValueError, SyntaxError):
            out[k] = v
    return out


def _resolve(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse flags, then fill anything not given on the command line from ``--config``."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    given = _given_dests(parser, argv)
    known = {a.dest for a in parser._actions if a.dest not in ("help", "config", "command")}
    for key, value in read_config(args.config).items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        if dest in given:
            continue
        action = next(a for a in parser._actions if a.dest == dest)
        if isinstance(value, str) and action.type is not None and action.nargs is None:
            value = action.type(value)
        if action.nargs in ("+", "*") and value is not None and not isinstance(value, (list, tuple)):
            value = [value]
        if action.choices is not None and value is not None:
            vals = value if isinstance(value, (list, tuple)) else [value]
            bad = [v for v in vals if v not in action.choices]
            if bad:
                raise UsageError(f"config key {key!r}: invalid choice {bad[0]!r}")
        setattr(args, dest, value)
    return args


def _given_dests(parser, argv) -> set:
    given = set()
    for tok in argv:
        if not tok.startswith("--"):
            continue
        flag = tok.split("=", 1)[0]
        for a in parser._actions:
            if flag in a.option_strings:
                given.add(a.dest)
    return given


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "func", "config")}


def write_manifest(out_dir, command: str, args, outputs, started: float, extra=None) -> None:
    manifest = {
        "command": command,
        "config": _config_echo(args),
        "seed": getattr(args, "seed", None),
        "outputs": sorted(os.path.basename(o) for o in outputs),
        "versions": {
            "pvscreen": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "workers_env": os.environ.get(WORKERS_ENV),
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    atomic_write(os.path.join(out_dir, "manifest.json"), json_text(manifest))


# ---------------------------------------------------------------- shared flags

def _add_sampler_flags(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int, default=4, help="number of chains (default 4)")
    g.add_argument("--warmup", type=int, default=2000, help="warmup iterations per chain (default 2000)")
    g.add_argument("--keep", type=int, default=2000, help="kept iterations per chain (default 2000)")
    g.add_argument("--thin", type=int, default=1, help="thinning factor (default 1)")
    g.add_argument("--seed", type=int, default=0, help="64-bit run seed (default 0)")
    g.add_argument("--proposal", choices=("random_walk", "mala"), default="random_walk",
                   help="proposal kind for beta and gamma (default random_walk)")
    g.add_argument("--target-accept", type=float, default=None,
                   help="adaptation target (default 0.234 random walk, 0.574 mala)")
    g.add_argument("--re-columns", choices=("intercept_exposure", "exposure", "all"),
                   default="intercept_exposure",
                   help="random-effect columns: intercept and exposure (default), exposure only, or all five")
    g.add_argument("--pi-prior", type=float, nargs=2, default=(1.0, 1.0), metavar=("A", "B"),
                   help="Beta prior on the inclusion probability (default 1 1)")
    g.add_argument("--hyper-sd", type=float, default=1.0,
                   help="prior SD of the log-Cholesky elements of Sigma_gamma (default 1)")
    g.add_argument("--beta-prior-sd", type=float, default=10.0, help="prior SD of the fixed effects (default 10)")


_RE = {"intercept_exposure": (0, 4), "exposure": (4,), "all": (0, 1, 2, 3, 4)}


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        n_chains=args.chains, n_warmup=args.warmup, n_keep=args.keep, seed=args.seed,
        proposal_kind=args.proposal, target_accept=args.target_accept, thin=args.thin,
        update_order=UPDATES, re_columns=_RE[args.re_columns],
        pi_prior=tuple(args.pi_prior), hyper_sd=args.hyper_sd, beta_prior_sd=args.beta_prior_sd,
    )


# ---------------------------------------------------------------- subcommands

def cmd_build_sigma(args) -> int:
    try:
        return _build_sigma(args)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, (UsageError, np.linalg.LinAlgError)):
            raise
        raise DataError(str(exc)) from None


def _build_sigma(args) -> int:
    started = time.time()
    if args.method == "identity":
        if args.n_drugs is None and args.input is None:
            raise UsageError("identity needs --n-drugs or --in")
        table = None
        n = args.n_drugs
        labels = tuple(f"drug{i}" for i in range(n)) if n else ()
        if args.input:
            table = read_coprescription(args.input, 1)
            n, labels = table.n_drugs, table.labels
        cov = build_sigma_d(None, "identity", args.eps_pd, n_drugs=n)
    else:
        if args.input is None:
            raise UsageError(f"--in is required for method {args.method}")
        if args.n_total is not None:
            n_total = args.n_total
        elif args.n_total_file is not None:
            n_total = read_n_total(args.n_total_file)
        else:
            raise UsageError("--n-total or --n-total-file is required")
        table = read_coprescription(args.input, n_total)
        labels = table.labels
        cov = build_sigma_d(table, args.method, args.eps_pd)
    out = args.out
    prov = os.path.splitext(out)[0] + ".json"
    atomic_write(out, matrix_csv_text(cov.matrix, labels))
    atomic_write(prov, json_text({
        "method": cov.method, "eps_pd": args.eps_pd, "repaired": cov.repaired,
        "min_eigenvalue_raw": cov.min_eig_raw, "min_eigenvalue": cov.min_eig,
        "n_drugs": int(cov.matrix.shape[0]),
    }))
    write_manifest(os.path.dirname(os.path.abspath(out)), "build-sigma", args, [out, prov], started)
    return EXIT_OK


def _load_sigma(path, ds):
    if path is None:
        return None
    try:
        m, labels = read_matrix_csv(path)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if m.shape != (ds.n_drugs, ds.n_drugs):
        raise DataError(f"Sigma_D is {m.shape[0]}x{m.shape[1]} but the dataset has {ds.n_drugs} drugs")
    if labels and ds.drug_names and tuple(labels) != tuple(ds.drug_names):
        raise DataError("Sigma_D labels do not match the dataset's drug names")
    if not np.allclose(m, m.T, atol=1e-12) or min_eigenvalue(m) <= 0:
        raise DataError("Sigma_D must be symmetric positive definite; run build-sigma")
    return m


def _summary_rows(summaries, res):
    sel = set(res.selected) if res is not None else set()
    for s in summaries:
        direction = res.direction.get(s.drug).value if res is not None and s.drug in sel else ""
        yield (s.label, s.pip, s.or_mean, s.or_low, s.or_high, s.or_mean_included,
               s.or_low_included, s.or_high_included, int(s.drug in sel), direction)


SUMMARY_HEADER = ("drug", "pip", "or_mean", "or_low", "or_high", "or_mean_included",
                  "or_low_included", "or_high_included", "selected", "direction")


def _draws_text(draws, labels) -> str:
    n = len(labels)
    q = draws[0].beta.shape[1]
    header = (["chain", "iteration"] + [f"beta{k}" for k in range(q)] + ["pi", "log_post"]
              + [f"delta:{lab}" for lab in labels] + [f"theta_x:{lab}" for lab in labels])

    def rows():
        for d in draws:
            for t in range(d.n_keep):
                yield ([d.chain, t] + list(d.beta[t]) + [d.pi[t], d.log_post[t]]
                       + [int(v) for v in d.delta[t]] + list(d.theta_x[t]))
    del n
    return csv_text(header, rows())


def cmd_fit(args) -> int:
    started = time.time()
    ds = load_dataset(args.data, args.names)
    sigma = _load_sigma(args.sigma, ds)
    cfg = _sampler_config(args)
    draws = run_chains(cfg, ds, sigma)
    labels = list(ds.drug_names) if ds.drug_names else [f"drug{i}" for i in range(ds.n_drugs)]
    summaries = summarize(draws, labels)
    pips = np.array([s.pip for s in summaries])
    alpha_r = args.alpha_r if args.alpha_r is not None else default_alpha_r(ds.n_drugs)
    res = select(pips, alpha_r, summaries)
    os.makedirs(args.out_dir, exist_ok=True)
    out_summary = os.path.join(args.out_dir, "summary.csv")
    out_diag = os.path.join(args.out_dir, "diagnostics.json")
    outputs = [out_summary, out_diag]
    atomic_write(out_summary, csv_text(
        SUMMARY_HEADER, _summary_rows(summaries, res),
        comments=[f"threshold={res.threshold:.10g}", f"alpha_r={alpha_r:g}",
                  f"expected_fdr={res.expected_fdr:.10g}", f"feasible={int(res.feasible)}"]))
    diag = diagnostics(draws) if cfg.n_chains >= 2 else {"note": "diagnostics need at least two chains"}
    if cfg.n_chains >= 2:
        names = {f"theta_x[{i}]": f"theta_x[{lab}]" for i, lab in enumerate(labels)}
        names.update({f"delta[{i}]": f"delta[{lab}]" for i, lab in enumerate(labels)})
        diag["parameters"] = {names.get(k, k): v for k, v in diag["parameters"].items()}
        diag["flagged"] = [names.get(k, k) for k in diag["flagged"]]
        diag["warmup_accept"] = [d.warmup_accept for d in draws]
    atomic_write(out_diag, json_text(diag))
    if args.draws:
        out_draws = os.path.join(args.out_dir, "draws.csv")
        atomic_write(out_draws, _draws_text(draws, labels))
        outputs.append(out_draws)
    write_manifest(args.out_dir, "fit", args, outputs, started)
    if cfg.n_chains >= 2 and diag["max_rhat"] > RHAT_FAIL:
        bad = [k for k, v in diag["parameters"].items() if v["rhat"] > RHAT_FAIL]
        print(f"warning: {len(bad)} parameters have R-hat > {RHAT_FAIL} (max {diag['max_rhat']:.3f}); "
              "results written but not converged", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _read_summary(path):
    try:
        df = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if "pip" not in df.columns:
        raise DataError(f"{path}: no 'pip' column")
    pips = df["pip"].to_numpy(dtype=float)
    if np.any(~np.isfinite(pips)) or np.any((pips < 0) | (pips > 1)):
        raise DataError(f"{path}: PIPs must lie in [0, 1]")
    return df, pips


def cmd_select(args) -> int:
    started = time.time()
    df, pips = _read_summary(args.pips)
    labels = df["drug"].astype(str).tolist() if "drug" in df.columns else [f"drug{i}" for i in range(len(pips))]
    or_mean = df["or_mean"].to_numpy(dtype=float) if "or_mean" in df.columns else np.full(len(pips), np.nan)
    res = select(pips, args.alpha_r, list(or_mean))
    os.makedirs(args.out_dir, exist_ok=True)
    out_sel = os.path.join(args.out_dir, "selection.csv")
    out_curve = os.path.join(args.out_dir, "fdr_curve.csv")
    sel = set(res.selected)

    def rows():
        for i, lab in enumerate(labels):
            lo = df["or_low"].iloc[i] if "or_low" in df.columns else np.nan
            hi = df["or_high"].iloc[i] if "or_high" in df.columns else np.nan
            d = res.direction[i].value if i in sel else ""
            yield lab, pips[i], or_mean[i], lo, hi, int(i in sel), d

    atomic_write(out_sel, csv_text(
        ("drug", "pip", "or_mean", "or_low", "or_high", "selected", "direction"), rows(),
        comments=[f"threshold={res.threshold:.10g}", f"alpha_r={args.alpha_r:g}",
                  f"expected_fdr={res.expected_fdr:.10g}", f"expected_fnr={res.expected_fnr:.10g}",
                  f"feasible={int(res.feasible)}"]))
    cand, r, fdr, fnr = threshold_curve(pips)
    atomic_write(out_curve, csv_text(("threshold", "n_selected", "expected_fdr", "expected_fnr"),
                                     zip(cand, r, fdr, fnr)))
    write_manifest(args.out_dir, "select", args, [out_sel, out_curve], started)
    print(f"selected {res.n_selected} of {len(pips)} at threshold {res.threshold:.4g}")
    return EXIT_OK


def _scenario(args):
    md = MDistribution(kind="fixed", path=args.m_file) if args.m_file else MDistribution(
        mu=args.m_mu, sigma=args.m_sigma, paired=args.m_paired)
    kw = dict(m_distribution=md, random_intercept_sd=args.random_intercept_sd,
              n_replicates=args.replicates, seed=args.seed, tau=args.tau)
    if args.scenario == "1":
        return scenario1_spec(args.n_drugs or 300, **kw)
    if args.n_drugs not in (None, 100):
        raise UsageError("scenario 2 has 100 drugs")
    return scenario2_spec(**kw)


def cmd_simulate(args) -> int:
    started = time.time()
    spec = _scenario(args)
    alphas = list(args.alpha)
    alpha_r = None if args.alpha_r is None else list(args.alpha_r)
    if alpha_r is not None and len(alpha_r) not in (1, len(alphas)):
        raise UsageError("--alpha-r takes one value or one per --alpha")
    table = run_benchmark(spec, tuple(args.methods), alphas, alpha_r, _sampler_config(args))
    summary = summarize_benchmark(table)
    os.makedirs(args.out_dir, exist_ok=True)
    out_b = os.path.join(args.out_dir, "benchmark.csv")
    out_s = os.path.join(args.out_dir, "benchmark_summary.csv")
    out_t = os.path.join(args.out_dir, "benchmark_table.md")
    cols = ["method", "alpha", "replicate", "n_selected", "power", "fdr", "failed", "error"]
    atomic_write(out_b, csv_text(cols, table[cols].itertuples(index=False)))
    atomic_write(out_s, csv_text(list(summary.columns), summary.itertuples(index=False)))
    atomic_write(out_t, format_table(summary))
    write_manifest(args.out_dir, "simulate", args, [out_b, out_s, out_t], started,
                   extra={"scenario": spec.name, "n_drugs": spec.n_drugs})
    print(format_table(summary))
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.time()
    try:
        summary = pd.read_csv(args.summary)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"{args.summary}: {exc}") from None
    need = {"alpha", "method"} | {f"{c}_{s}" for c in ("n_selected", "power", "fdr") for s in ("median", "mad")}
    missing = need - set(summary.columns)
    if missing:
        raise DataError(f"{args.summary}: missing columns {sorted(missing)}")
    text = format_table(summary, digits=args.digits)
    text += ("\nThe empirical-Bayes rows use a simplified per-drug comparator "
             "(moment-estimated normal prior), not a full mixed-model fit.\n")
    if args.out:
        atomic_write(args.out, text)
        write_manifest(os.path.dirname(os.path.abspath(args.out)), "report", args, [args.out], started)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pvscreen", description="Bayesian spike-and-slab screening of drug effects on rare events.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    b = sub.add_parser("build-sigma", help="build the drug covariance matrix from co-prescription counts")
    b.add_argument("--config", help="key = value config file")
    b.add_argument("--method", choices=SIGMA_METHODS, required=False, default="tetrachoric",
                   help="similarity measure (default tetrachoric)")
    b.add_argument("--in", dest="input", help="co-prescription count CSV (labelled square matrix)")
    b.add_argument("--n-total", type=int, help="total patient count")
    b.add_argument("--n-total-file", help="one-line file holding the total patient count")
    b.add_argument("--n-drugs", type=int, help="matrix size for --method identity")
    b.add_argument("--eps-pd", type=float, default=1e-6, help="eigenvalue floor for the PD repair (default 1e-6)")
    b.add_argument("--out", default="sigma_d.csv", help="output matrix CSV (default sigma_d.csv)")
    b.set_defaults(func=cmd_build_sigma)

    f = sub.add_parser("fit", help="run the sampler and write posterior summaries")
    f.add_argument("--config", help="key = value config file")
    f.add_argument("--data", required=False, help="stratum CSV")
    f.add_argument("--names", help="drug name sidecar CSV")
    f.add_argument("--sigma", help="Sigma_D CSV (default identity)")
    f.add_argument("--alpha-r", type=float, help="Bayesian FDR bound (default 0.02 for >= 500 drugs, else 0.05)")
    f.add_argument("--draws", action="store_true", default=False, help="also write draws.csv")
    f.add_argument("--out-dir", default="fit_out", help="output directory (default fit_out)")
    _add_sampler_flags(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("select", help="Bayesian FDR selection from a PIP table")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--pips", required=False, help="CSV with a 'pip' column (e.g. fit's summary.csv)")
    s.add_argument("--alpha-r", type=float, default=0.05, help="Bayesian FDR bound (default 0.05)")
    s.add_argument("--out-dir", default="select_out", help="output directory (default select_out)")
    s.set_defaults(func=cmd_select)

    m = sub.add_parser("simulate", help="replicate benchmark on a synthetic scenario")
    m.add_argument("--config", help="key = value config file")
    m.add_argument("--scenario", choices=("1", "2"), default="2", help="scenario (default 2)")
    m.add_argument("--n-drugs", type=int, help="scenario 1 size (default 300; 922 is the full design)")
    m.add_argument("--alpha", type=float, nargs="+", default=[0.05], help="target FDR level(s) (default 0.05)")
    m.add_argument("--alpha-r", type=float, nargs="+",
                   help="Bayesian FDR bound(s) (default 0.02 for >= 500 drugs, else alpha)")
    m.add_argument("--replicates", type=int, default=50, help="replicate count (default 50)")
    m.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS),
                   help="methods to compare (default all four)")
    m.add_argument("--m-mu", type=float, default=DESK_M.mu,
                   help=f"log-scale mean of stratum sizes (default {DESK_M.mu})")
    m.add_argument("--m-sigma", type=float, default=DESK_M.sigma,
                   help=f"log-scale SD of stratum sizes (default {DESK_M.sigma})")
    m.add_argument("--m-paired", type=lambda v: str(v).lower() in ("1", "true", "yes"), default=DESK_M.paired,
                   help=f"share stratum sizes across the two windows (default {DESK_M.paired})")
    m.add_argument("--m-file", help="fixed stratum sizes, one row of 8 per drug")
    m.add_argument("--random-intercept-sd", type=float, default=0.3, help="SD of the drug intercepts (default 0.3)")
    m.add_argument("--tau", type=float, default=0.0, help="SD scale of correlated signal perturbations (default 0)")
    m.add_argument("--out-dir", default="sim_out", help="output directory (default sim_out)")
    _add_sampler_flags(m)
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="markdown tables from a benchmark summary CSV")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--summary", required=False, help="benchmark_summary.csv from simulate")
    r.add_argument("--digits", type=int, default=2, help="decimals (default 2)")
    r.add_argument("--out", help="output markdown file (default stdout)")
    r.set_defaults(func=cmd_report)
    return p


_REQUIRED = {"fit": ("data",), "select": ("pips",), "report": ("summary",)}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = parser.parse_args(argv)
        if pre.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        subparser = parser._subparsers._group_actions[0].choices[pre.command]
        args = _resolve(subparser, argv[argv.index(pre.command) + 1:])
        args.command = pre.command
        for key in _REQUIRED.get(pre.command, ()):
            if getattr(args, key) is None:
                raise UsageError(f"--{key.replace('_', '-')} is required")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return pre.func(args)
    except UsageError as exc:
        print(f"pvscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"pvscreen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"pvscreen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError, SamplerError) as exc:
        print(f"pvscreen: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"pvscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
