"""Command line entry point: ``lodmsq {gt,build,search,eval,ablate,analyze}``.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(keys are flag names without the leading dashes); flags given on the command
line override the file. Exit status is 0 on success, 1 on runtime errors and
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import build_baseline
from .data import GroundTruth, load_ivecs, load_vecs, save_ivecs, save_vecs
from .evaluation import (
    CSV_FIELDS,
    BitBudgetError,
    ground_truth_cached,
    recall_n_at_k,
    rows_to_csv,
    run_grid,
)
from .index import IndexConfig, Kind, deserialize_index, serialize_index
from .lod import TrainingOptions
from .quantizers import train_vq
from .search import default_n_probe, search_batch
from . import theory

logger = logging.getLogger("lodmsq")

PARAMS_HELP = """\
index parameters:
  m       number of coarse partitions (--m)
  n_B     PQ codebooks per vector, i.e. subspaces (--n_B)
  n_W     codewords per PQ codebook; codes take ceil(log2 n_W) bits (--n_W)
  l_UQ    bits of the uniformly quantized projected component (--l_UQ)
  l_SQ    bits of the scalar quantized per-vector scale (--l_SQ)
  m_ADC   partitions scanned per query; defaults to round(m / 10) (--m_ADC)
"""


class UsageError(Exception):
    """Bad flags, config values or input paths (exit status 2)."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [t for t in str(text).replace(" ", "").split(",") if t]


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command line flags take precedence")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: available cores); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_index_params(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("index parameters")
    g.add_argument("--kind", default="mips_lod_msq",
                   help="mips_pq, mips_opq, l2_opq, mips_msq, mips_lod_opq or mips_lod_msq")
    g.add_argument("--m", type=int, default=None, help="number of coarse partitions")
    g.add_argument("--n_B", type=int, default=None, help="PQ codebooks (subspaces) per vector")
    g.add_argument("--n_W", type=int, default=16, help="codewords per PQ codebook (default 16)")
    g.add_argument("--l_UQ", type=int, default=8,
                   help="bits for the projected component, LOD kinds (default 8)")
    g.add_argument("--l_SQ", type=int, default=4,
                   help="bits for the per-vector scale, MSQ kinds (default 4)")
    g.add_argument("--proj_dir", choices=("center", "query_pca"), default="center",
                   help="projection direction per partition (default center)")
    g.add_argument("--train_queries", help="fvecs of training queries for --proj_dir query_pca")
    g.add_argument("--clip", type=_float_list, default=[0.01, 0.99],
                   help="UQ clipping quantiles lo,hi (default 0.01,0.99)")
    g.add_argument("--train_size", type=int, default=None,
                   help="subsample size for training quantizers (default: all rows)")
    g.add_argument("--ivf_iters", type=int, default=25, help="Lloyd iterations for the partitions")
    g.add_argument("--pq_iters", type=int, default=10, help="Lloyd iterations per PQ subspace")
    g.add_argument("--opq_iters", type=int, default=20, help="OPQ alternating iterations")


def _m_adc_arg(p) -> None:
    p.add_argument("--m_ADC", type=int, default=None,
                   help="partitions scanned per query (default: 10%% of m)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodmsq",
        description="IVF indexes for maximum inner product search with local orthogonal "
                    "decomposition and multiscale quantization.",
        epilog=PARAMS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("gt", help="exact top-k ground truth (cached)", epilog=PARAMS_HELP,
                       formatter_class=fmt)
    _add_common(p)
    p.add_argument("--data", help="database vectors (.fvecs)")
    p.add_argument("--queries", help="query vectors (.fvecs)")
    p.add_argument("--depth", type=int, default=100, help="neighbors per query (default 100)")
    p.add_argument("--out_dir", help="cache directory (default: next to --data)")

    p = sub.add_parser("build", help="train and encode an index", epilog=PARAMS_HELP,
                       formatter_class=fmt)
    _add_common(p)
    p.add_argument("--data", help="database vectors (.fvecs)")
    p.add_argument("--out", help="index file to write")
    p.add_argument("--seed", type=int, default=None, help="random seed (required)")
    _add_index_params(p)

    p = sub.add_parser("search", help="query an index", epilog=PARAMS_HELP, formatter_class=fmt)
    _add_common(p)
    p.add_argument("--index", help="index file from 'build'")
    p.add_argument("--queries", help="query vectors (.fvecs)")
    p.add_argument("--k", type=int, default=10, help="results per query (default 10)")
    _m_adc_arg(p)
    p.add_argument("--out", help="output prefix; writes PREFIX.ids.ivecs and PREFIX.scores.fvecs")

    p = sub.add_parser("eval", help="recall of search results against ground truth",
                       epilog=PARAMS_HELP, formatter_class=fmt)
    _add_common(p)
    p.add_argument("--results", help="ids .ivecs written by 'search'")
    p.add_argument("--gt", help="ground truth ids .ivecs written by 'gt'")
    p.add_argument("--n", type=int, default=1, help="true neighbors that count (recall n@k)")
    p.add_argument("--ks", type=_int_list, default=None,
                   help="comma separated k values (default 1,10,100 up to the result width)")
    p.add_argument("--index", help="index file; fills the configuration columns")
    p.add_argument("--m_ADC", type=int, default=None, help="m_ADC used by the search, for the CSV")
    p.add_argument("--seed", type=int, default=None, help="build seed, for the CSV")
    p.add_argument("--dataset", default=None, help="dataset label (default: results file stem)")
    p.add_argument("--out", help="CSV file (default stdout)")

    p = sub.add_parser("ablate", help="recall grid over kinds, bit budgets and seeds",
                       epilog=PARAMS_HELP, formatter_class=fmt)
    _add_common(p)
    p.add_argument("--data", help="database vectors (.fvecs)")
    p.add_argument("--queries", help="query vectors (.fvecs)")
    p.add_argument("--gt", help="ground truth ids .ivecs (default: computed)")
    p.add_argument("--kinds", type=_str_list,
                   default=["mips_opq", "mips_lod_msq", "mips_msq", "mips_lod_opq"],
                   help="comma separated kinds (default: OPQ, LOD_MSQ, MSQ, LOD_OPQ)")
    p.add_argument("--bits", type=_int_list, default=[100],
                   help="comma separated bits per vector (default 100)")
    p.add_argument("--ks", type=_int_list, default=[1, 2, 5, 10, 20, 50, 100],
                   help="comma separated k values")
    p.add_argument("--seeds", type=_int_list, default=None,
                   help="comma separated seeds (required)")
    p.add_argument("--n", type=int, default=1, help="true neighbors that count (recall n@k)")
    p.add_argument("--m", type=int, default=None, help="number of coarse partitions")
    _m_adc_arg(p)
    p.add_argument("--n_W", type=int, default=16, help="codewords per PQ codebook")
    p.add_argument("--l_UQ", type=int, default=8, help="bits for the projected component")
    p.add_argument("--l_SQ", type=int, default=4, help="bits for the per-vector scale")
    p.add_argument("--train_size", type=int, default=None, help="training subsample size")
    p.add_argument("--dataset", default=None, help="dataset label (default: --data stem)")
    p.add_argument("--out", help="CSV file (default stdout)")

    p = sub.add_parser("analyze", help="numerical checks of the alignment analysis",
                       epilog=PARAMS_HELP, formatter_class=fmt)
    _add_common(p)
    p.add_argument("what", choices=("variance", "bounds", "lemma1"))
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", help="CSV file (default stdout)")
    g = p.add_argument_group("variance")
    g.add_argument("--data", help="database .fvecs; its largest partition is profiled")
    g.add_argument("--queries", help="query .fvecs (with --data)")
    g.add_argument("--m", type=int, default=20, help="partitions when clustering --data")
    g.add_argument("--n_v", type=int, default=1000, help="directions in the profile")
    g.add_argument("--d", type=int, default=64, help="synthetic dimension")
    g.add_argument("--samples", type=int, default=100000,
                   help="synthetic residuals/queries; Monte-Carlo samples for lemma1")
    g.add_argument("--anisotropic", action="store_true",
                   help="synthetic queries concentrated along the center direction")
    g = p.add_argument_group("bounds and lemma1")
    g.add_argument("--ms", type=_int_list, default=[100, 1000, 10000])
    g.add_argument("--ds", type=_int_list, default=None,
                   help="dimensions (default 8,32,128 for bounds, 1,2,4,...,256 for lemma1)")
    g.add_argument("--deltas", type=_float_list, default=[0.1, 0.5])
    g.add_argument("--eta1", type=float, default=None,
                   help="bound constant (default: calibrated on the sweep)")
    g.add_argument("--trials", type=int, default=20000, help="Monte-Carlo trials per cell")
    g.add_argument("--marginal", choices=("bound", "sphere"), default="bound",
                   help="density used for the exact quantile")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv`` with config-file defaults merged underneath the flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(dests) - {"config"})
        if unknown:
            raise UsageError(f"unknown key(s) in {args.config}: {', '.join(unknown)}")
        converted = {}
        for key, value in values.items():
            if key == "config":
                continue
            action = dests[key]
            if action.nargs == 0:
                converted[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    converted[key] = action.type(value) if action.type else value
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"{args.config}: bad value for {key}: {exc}")
        sub.set_defaults(**converted)
        args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    return args


# --------------------------------------------------------------------------
# helpers


def _need(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n for n in missing))


def _existing(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load(path, what) -> np.ndarray:
    return load_vecs(_existing(path, what))


def _write_csv(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _options(args) -> TrainingOptions:
    if len(args.clip) != 2:
        raise UsageError("--clip takes two quantiles lo,hi")
    return TrainingOptions(args.ivf_iters, args.pq_iters, args.opq_iters, args.train_size,
                           tuple(args.clip))


def _kind(name) -> Kind:
    try:
        return Kind.parse(name)
    except ValueError as exc:
        raise UsageError(str(exc))


# --------------------------------------------------------------------------
# subcommands


def cmd_gt(args) -> int:
    _need(args, "data", "queries")
    X = _load(args.data, "dataset")
    Q = _load(args.queries, "query file")
    if not 1 <= args.depth <= X.shape[0]:
        raise UsageError(f"--depth must be in [1, {X.shape[0]}], got {args.depth}")
    out_dir = args.out_dir or Path(args.data).parent
    gt, path, hit = ground_truth_cached(X, Q, args.depth, out_dir, Path(args.data).stem,
                                        n_jobs=args.threads)
    logger.info("ground truth %s (%s)", path, "cache hit" if hit else "computed")
    print(path)
    return 0


def cmd_build(args) -> int:
    _need(args, "data", "out", "seed", "m", "n_B")
    kind = _kind(args.kind)
    try:
        config = IndexConfig(args.m, args.n_B, args.n_W, args.l_UQ, args.l_SQ)
    except ValueError as exc:
        raise UsageError(str(exc))
    options = _options(args)
    X = _load(args.data, "dataset")
    if args.m > X.shape[0]:
        raise UsageError(f"--m={args.m} exceeds the number of vectors {X.shape[0]}")
    queries = None
    if args.proj_dir == "query_pca":
        _need(args, "train_queries")
        queries = _load(args.train_queries, "training query file")
    index = build_baseline(kind, X, config, args.seed, options, args.proj_dir, queries)
    serialize_index(index, args.out)
    logger.info("built %s index: %d entries, %d bits/entry -> %s", kind.value,
                index.n_entries, index.bits_per_entry(), args.out)
    return 0


def cmd_search(args) -> int:
    _need(args, "index", "queries", "out")
    index = deserialize_index(_existing(args.index, "index file"))
    Q = _load(args.queries, "query file")
    m = len(index.partitions)
    m_adc = default_n_probe(m) if args.m_ADC is None else args.m_ADC
    if not 1 <= m_adc <= m:
        raise UsageError(f"--m_ADC must be in [1, m={m}], got {m_adc}")
    if args.k < 1:
        raise UsageError("--k must be positive")
    if Q.shape[1] != index.input_dim:
        raise UsageError(f"queries have dimension {Q.shape[1]}, index expects {index.input_dim}")
    ids, scores = search_batch(Q, args.k, index, m_adc, n_jobs=args.threads)
    save_ivecs(ids, f"{args.out}.ids.ivecs")
    save_vecs(scores.astype(np.float32), f"{args.out}.scores.fvecs")
    logger.info("searched %d queries, m_ADC=%d -> %s.ids.ivecs", Q.shape[0], m_adc, args.out)
    return 0


def cmd_eval(args) -> int:
    _need(args, "results", "gt")
    ids = load_ivecs(_existing(args.results, "results file"))
    gt = load_ivecs(_existing(args.gt, "ground truth file"))
    if ids.shape[0] != gt.shape[0]:
        raise UsageError(f"{ids.shape[0]} result rows but {gt.shape[0]} ground truth rows")
    width = ids.shape[1]
    ks = args.ks or sorted({k for k in (1, 10, 100) if k <= width} | {width})
    if any(k < args.n or k > width for k in ks):
        raise UsageError(f"every k must lie in [n={args.n}, {width}]")
    if gt.shape[1] < args.n:
        raise UsageError(f"ground truth depth {gt.shape[1]} is smaller than n={args.n}")
    meta = dict(kind="", bits="", m="", n_B="", n_W="", l_UQ="", l_SQ="")
    m_adc = "" if args.m_ADC is None else args.m_ADC
    if args.index:
        index = deserialize_index(_existing(args.index, "index file"))
        cfg, kind = index.config, index.kind
        meta = dict(kind=kind.value, bits=index.bits_per_entry(), m=cfg.n_partitions,
                    n_B=cfg.n_subspaces, n_W=cfg.n_codewords,
                    l_UQ=cfg.uq_bits if kind.uses_lod else 0,
                    l_SQ=cfg.sq_bits if kind.uses_scales else 0)
        if args.m_ADC is None:
            m_adc = default_n_probe(cfg.n_partitions)
    dataset = args.dataset or Path(args.results).name.split(".")[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for k in ks:
        rec = recall_n_at_k(ids, gt, args.n, k)
        row = dict(meta, dataset=dataset, m_ADC=m_adc,
                   seed="" if args.seed is None else args.seed, n=args.n, k=k,
                   recall=f"{rec:.6f}")
        w.writerow([row[f] for f in CSV_FIELDS])
    _write_csv(buf.getvalue(), args.out)
    return 0


def cmd_ablate(args) -> int:
    _need(args, "data", "queries", "seeds", "m")
    kinds = [_kind(k) for k in args.kinds]
    X = _load(args.data, "dataset")
    Q = _load(args.queries, "query file")
    if args.m_ADC is not None and not 1 <= args.m_ADC <= args.m:
        raise UsageError(f"--m_ADC must be in [1, m={args.m}]")
    gt = None
    if args.gt:
        gt = load_ivecs(_existing(args.gt, "ground truth file"))
        if gt.shape[0] != Q.shape[0] or gt.shape[1] < args.n:
            raise UsageError("ground truth does not match the queries or is too shallow")
        gt = GroundTruth(gt.astype(np.int64), np.zeros(gt.shape))
    options = TrainingOptions(train_size=args.train_size)
    try:
        rows = run_grid(X, Q, kinds, args.bits, args.ks, args.seeds, args.m, args.m_ADC,
                        args.l_UQ, args.l_SQ, args.n_W, args.n, gt,
                        args.dataset or Path(args.data).stem, options, args.threads)
    except BitBudgetError as exc:
        raise UsageError(str(exc))
    _write_csv(rows_to_csv(rows), args.out)
    return 0


def _synthetic_partition(d, n, anisotropic, seed):
    rng = np.random.default_rng(seed)
    center = np.zeros(d)
    center[0] = 3.0
    residuals = rng.standard_normal((n, d))
    queries = rng.standard_normal((n, d))
    if anisotropic:
        queries[:, 1:] *= 0.2
    return residuals, center, queries


def cmd_analyze(args) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.what == "variance":
        if args.data:
            _need(args, "queries")
            X = _load(args.data, "dataset")
            Q = _load(args.queries, "query file")
            centers, labels = train_vq(X, args.m, seed=args.seed)
            big = int(np.argmax(np.bincount(labels, minlength=args.m)))
            residuals, center = X[labels == big] - centers[big], centers[big]
        else:
            residuals, center, Q = _synthetic_partition(args.d, args.samples, args.anisotropic,
                                                        args.seed)
        prof = theory.variance_profile(residuals, center, Q, args.n_v, args.seed)
        w.writerow(("angle", "x", "y", "var"))
        for row in prof.rows():
            w.writerow([_fmt(v) for v in row])
        logger.info("max/min variance ratio %.4f", prof.ratio())
    elif args.what == "bounds":
        ds = args.ds or [8, 32, 128]
        eta1 = args.eta1
        if eta1 is None:
            eta1 = theory.calibrate_eta1(args.ms, ds, args.deltas, args.marginal)
            logger.info("calibrated eta1 = %.9g", eta1)
        w.writerow(("m", "d", "delta", "L1", "L1_weak", "exact", "empirical"))
        for m in args.ms:
            for d in ds:
                for delta in args.deltas:
                    w.writerow([m, d, _fmt(delta),
                                _fmt(theory.l1_bound(m, d, delta, eta1)),
                                _fmt(theory.l1_weak_bound(m, d, delta, eta1)),
                                _fmt(theory.max_cos_quantile_exact(m, d, delta, args.marginal)),
                                _fmt(theory.empirical_max_cos(m, d, delta, args.trials,
                                                              args.seed))])
    else:
        ds = args.ds or [2**i for i in range(9)]
        w.writerow(("d", "estimate", "stderr"))
        for d in ds:
            est = theory.lemma1_mc(d, args.samples, args.seed)
            w.writerow([d, _fmt(est.mean), _fmt(est.stderr)])
    _write_csv(buf.getvalue(), args.out)
    return 0


COMMANDS = {
    "gt": cmd_gt,
    "build": cmd_build,
    "search": cmd_search,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"lodmsq: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse: --help or bad flags
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        # BLAS stays single-threaded so floating point results cannot depend
        # on --threads; parallelism comes from our own query-level workers.
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lodmsq: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"lodmsq: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
