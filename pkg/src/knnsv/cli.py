"""Command-line entry point: ``knnsv <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import lsh
from .core import CLASSIFICATION, REGRESSION, Dataset, InputError, SortedIndex, ValuationConfig
from .data import gaussian_blobs
from .detect import format_record, run_detection
from .exact import (
    knn_shapley,
    resolve_threads,
    sv_original_classification,
    sv_soft_classification,
    sv_soft_regression,
    value_for_test_point,
)
from .oracle import shapley_exact_enumeration
from .utilities import bind_utility

METHOD_ALIASES = {
    "original": "original-classification",
    "soft": "soft-classification",
    "soft-regression": "soft-regression",
}


def read_table(path, label_column: str = "y", task: str = CLASSIFICATION):
    """Parse a headed CSV into a float feature matrix and a label vector.

    Rows and columns in error messages are 1-based; row 1 is the first data row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise InputError(f"{path}: no label column {label_column!r} in header {header}")
        label_at = header.index(label_column)
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            values = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    value = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: cannot parse {cell!r} as a number at row {row_no}, column {col_no}"
                    ) from None
                if col_no - 1 == label_at:
                    if task == CLASSIFICATION and not value.is_integer():
                        raise InputError(
                            f"{path}: class label {cell!r} is not an integer at row {row_no}, column {col_no}"
                        )
                    labels.append(value)
                else:
                    values.append(value)
            feats.append(values)
    if not feats:
        raise InputError(f"{path}: no data rows")
    if len(header) < 2:
        raise InputError(f"{path}: need at least one feature column besides the label")
    y = np.array(labels)
    return np.array(feats, dtype=np.float64), (y.astype(np.int64) if task == CLASSIFICATION else y)


def zscore_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def load_csv(path, label_column: str = "y", task: str = CLASSIFICATION, normalize: bool = False,
             stats=None, n_classes: int | None = None) -> Dataset:
    """Load a Dataset; ``normalize`` z-scores features with ``stats`` or, if absent, this file's own."""
    x, y = read_table(path, label_column, task)
    if normalize:
        mean, std = stats if stats is not None else zscore_stats(x)
        x = (x - mean) / std
    return Dataset(x, y, task, n_classes)


def _load_pair(args, task):
    x_tr, y_tr = read_table(args.train, args.label_col, task)
    x_te, y_te = read_table(args.test, args.label_col, task)
    if args.normalize:
        mean, std = zscore_stats(x_tr)
        x_tr, x_te = (x_tr - mean) / std, (x_te - mean) / std
    n_classes = None
    if task == CLASSIFICATION:
        n_classes = getattr(args, "classes", None) or max(int(y_tr.max()), int(y_te.max()), 1) + 1
    train = Dataset(x_tr, y_tr, task, n_classes)
    test = Dataset(x_te, y_te, task, n_classes)
    train.check_compatible(test)
    return train, test


def _write_values(values, args, meta):
    if args.json:
        text = json.dumps({**meta, "values": [float(v) for v in values]}) + "\n"
    else:
        text = "index,value\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(values))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_values(args):
    method = METHOD_ALIASES[args.method]
    task = REGRESSION if method.endswith("regression") else CLASSIFICATION
    train, test = _load_pair(args, task)
    meta = {"method": method, "k": args.k, "n": train.n, "n_test": test.n}
    if args.lsh:
        if method != "soft-classification":
            raise InputError("--lsh is only available for --method soft")
        if args.k_star is None:
            raise InputError("--lsh needs --k-star")
        r = args.bucket_width or lsh.default_bucket_width(train.x)
        m, l = args.bits, args.tables
        if m is None or l is None:
            tuning = lsh.recommend_parameters(train, test, args.k_star, args.delta, r, args.tuning)
            m = m or tuning.m
            l = l or tuning.l
        family = lsh.sample_hash_family(l, m, r, train.dim, args.seed)
        values = lsh.lsh_shapley(train, test, args.k_star, args.k, train.n_classes, family,
                                 threads=args.threads)
        meta.update({"k_star": args.k_star, "tables": l, "bits": m, "bucket_width": r, "seed": args.seed})
    else:
        config = ValuationConfig(args.k, method, train.n_classes)
        values = knn_shapley(train, test, config, threads=args.threads)
    _write_values(values, args, meta)
    return 0


def _random_instance(rng, n, k, c, method):
    # distinct distances: a shuffled ladder with sub-unit jitter
    dist = rng.permutation(n) + 0.5 * rng.random(n)
    sorted_index = SortedIndex.from_distances(dist)
    if method == "soft-regression":
        labels = rng.uniform(-2, 2, n)
        y_test = float(rng.uniform(-2, 2))
    else:
        labels = rng.integers(0, c, n)
        y_test = int(rng.integers(0, c))
    return sorted_index, labels, y_test


def oracle_deviation(n, k, c, method, trials, seed) -> float:
    """Largest entrywise gap between the closed form and subset enumeration over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        sorted_index, labels, y_test = _random_instance(rng, n, k, c, method)
        if method == "original-classification":
            fast = sv_original_classification(sorted_index, labels, y_test, k)
        elif method == "soft-classification":
            fast = sv_soft_classification(sorted_index, labels, y_test, k, c)
        else:
            fast = sv_soft_regression(sorted_index, labels, y_test, k)
        slow = shapley_exact_enumeration(bind_utility(method, sorted_index, labels, y_test, k, c), n)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    return worst


def cmd_oracle_check(args):
    method = METHOD_ALIASES[args.method]
    worst = oracle_deviation(args.n, args.k, args.classes, method, args.trials, args.seed)
    ok = worst <= args.tol
    print(f"method={method} n={args.n} k={args.k} trials={args.trials} "
          f"max_abs_deviation={worst:.3e} tol={args.tol:.1e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_lsh_tune(args):
    train, test = _load_pair(args, CLASSIFICATION)
    r = args.bucket_width or lsh.default_bucket_width(train.x)
    tuning = lsh.recommend_parameters(train, test, args.k_star, args.delta, r, args.rule)
    print(json.dumps(tuning.as_dict()))
    return 0


def cmd_detect(args):
    train, test = _load_pair(args, CLASSIFICATION)
    _, record = run_detection(train, test, METHOD_ALIASES[args.method], args.rule, args.flip_rate,
                              args.k, args.seed, threads=args.threads, name=args.train)
    print(format_record(record))
    return 0


def time_one_test_point(n, dim=10, repeats=5, seed=0) -> float:
    """Best-of-``repeats`` seconds for exact soft-label values of one test point."""
    train = gaussian_blobs(n, dim, seed=seed)
    query = gaussian_blobs(1, dim, seed=seed + 1)
    config = ValuationConfig(k=5, method="soft-classification")
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        value_for_test_point(train, query.x[0], query.y[0], config)
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    print("n,seconds")
    prev = None
    for n in sizes:
        t = time_one_test_point(n, repeats=args.repeats)
        print(f"{n},{t:.6f}")
        if prev is not None:
            print(f"# ratio {n}/{prev[0]}: {t / prev[1]:.3f}", file=sys.stderr)
        prev = (n, t)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="knnsv", description="Shapley data values for KNN models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, methods=("original", "soft", "soft-regression")):
        p.add_argument("--train", required=True)
        p.add_argument("--test", required=True)
        p.add_argument("--label-col", default="y")
        p.add_argument("--normalize", action="store_true")
        if methods:
            p.add_argument("--method", choices=methods, default="soft")

    p = sub.add_parser("values", help="value every training point")
    data_args(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--classes", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", default=True)
    mode.add_argument("--lsh", action="store_true")
    p.add_argument("--k-star", type=int)
    p.add_argument("--tables", type=int)
    p.add_argument("--bits", type=int)
    p.add_argument("--bucket-width", type=float)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--tuning", choices=("standard", "worst-case"), default="standard")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_values)

    p = sub.add_parser("oracle-check", help="compare closed forms with subset enumeration")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--method", choices=tuple(METHOD_ALIASES), default="soft")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("lsh-tune", help="recommend LSH tables and bits")
    data_args(p, methods=())
    p.add_argument("--k-star", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--bucket-width", type=float)
    p.add_argument("--rule", choices=("standard", "worst-case"), default="standard")
    p.set_defaults(func=cmd_lsh_tune)

    p = sub.add_parser("detect", help="mislabeled-data detection experiment")
    data_args(p, methods=("original", "soft"))
    p.add_argument("--rule", choices=("rank", "cluster"), default="rank")
    p.add_argument("--flip-rate", type=float, default=0.1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="time exact valuation of one test point")
    p.add_argument("--sizes", default="100000,200000")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "threads"):
        args.threads = resolve_threads(args.threads)
    try:
        return args.func(args)
    except (InputError, lsh.LshRetrievalFailure, FileNotFoundError) as exc:
        print(f"knnsv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
