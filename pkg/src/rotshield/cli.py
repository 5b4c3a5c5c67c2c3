"""Command-line front end.

Exit status: 0 on success, 1 on a runtime failure (bad file contents, failed
computation), 2 on a usage error. Seeds default to ``$ROTSHIELD_SEED`` (or 0)
when no ``--seed`` flag is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as rio
from .attack import AttackError, ak_ica_attack, bounds_of
from .evaluate import (
    EvaluationError,
    cluster_agreement,
    cluster_distances,
    kmeans,
    run_experiment1,
    run_figure1_sweep,
    sweep_known_indices,
    synthetic_sources,
)
from .linalg import LinAlgError
from .transform import (
    Dataset,
    TransformError,
    difference_covariance,
    make_key,
    normalize_to_unit,
    perturb,
)

SEED_ENV = "ROTSHIELD_SEED"
RUNTIME_ERRORS = (
    TransformError,
    AttackError,
    EvaluationError,
    LinAlgError,
    rio.CsvFormatError,
    OSError,
    ValueError,
    KeyError,
)


class CliError(Exception):
    """Runtime failure reported as ``error: ...`` with exit status 1."""


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"fraction must lie in (0, 1), got {v}")
    return v


def _int_list(text: str) -> list[int]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return [_positive_int(t) for t in items]


def _fraction_list(text: str) -> list[float]:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return [_fraction(t) for t in items]


def _seed_list(text: str) -> list[int]:
    """``20`` means seeds 0..19; ``3,5,9`` lists them explicitly."""
    text = text.strip()
    if not text:
        raise argparse.ArgumentTypeError("empty seed list")
    try:
        if "," in text:
            return [int(t) for t in text.split(",") if t.strip()]
        count = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError("seed count must be at least 1")
    return list(range(count))


def _synthetic_spec(text: str) -> tuple[int, int]:
    fields = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected d=<int>,N=<int>, got {text!r}")
        try:
            fields[name.strip()] = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if set(fields) != {"d", "N"}:
        raise argparse.ArgumentTypeError(f"expected d=<int>,N=<int>, got {text!r}")
    if fields["d"] < 2 or fields["N"] < 1:
        raise argparse.ArgumentTypeError("synthetic data needs d >= 2 and N >= 1")
    return fields["d"], fields["N"]


def _same_path(a, b) -> bool:
    return os.path.abspath(a) == os.path.abspath(b)


def _emit_json(obj, path=None):
    if path:
        rio.write_json(path, obj)
    else:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


# commands ---------------------------------------------------------------------


def cmd_perturb(args, parser) -> int:
    meta = args.meta or f"{args.out}.meta.json"
    for other, label in ((args.out, "--out"), (meta, "--meta")):
        if _same_path(args.key, other) and not args.force:
            parser.error(f"--key would overwrite the released file given by {label}; pass --force")
    seed = args.seed if args.seed is not None else _default_seed()
    x = rio.read_csv(args.input)
    if args.n > x.n_records:
        raise CliError(f"--n {args.n} exceeds the number of records ({x.n_records})")
    if args.no_normalize:
        x_ready = x
    else:
        x_ready, _ = normalize_to_unit(x)
    key = make_key(x_ready, args.n, master_seed=seed)
    y = perturb(x_ready, key)
    rio.write_csv(args.out, y)
    rio.write_release_metadata(meta, key, y)
    print(f"warning: {args.key} holds the secret perturbation key; keep it private", file=sys.stderr)
    rio.write_key(args.key, key)
    print(f"parts: {key.n}")
    print("part sizes: " + ",".join(str(s) for s in key.partitioning.sizes))
    print(f"difference covariance: {difference_covariance(x_ready, y)!r}")
    return 0


def _read_indices(path) -> np.ndarray:
    idx = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                idx.append(int(line))
            except ValueError:
                raise CliError(f"{path}: line {lineno}: not an index: {line!r}") from None
    return np.array(idx, dtype=int)


def _read_bounds(path, d) -> np.ndarray:
    data = rio.read_csv(path)
    # attribute rows, min and max columns
    if data.d != 2 or data.n_records != d:
        raise CliError(f"{path}: expected {d} rows with min,max columns")
    return data.records.copy()


def cmd_attack(args, parser) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    released = rio.read_csv(args.released)
    truth = rio.read_csv(args.truth) if args.truth else None
    original = rio.read_csv(args.original) if args.original else truth

    if args.known:
        if not args.indices:
            parser.error("--known needs --indices")
        known = rio.read_csv(args.known)
        idx = _read_indices(args.indices)
    elif args.fraction is not None:
        if original is None:
            parser.error("--fraction needs --original (or --truth) to draw the known records from")
        idx = sweep_known_indices(released.n_records, args.fraction, seed)
        known = original.subset(idx)
    else:
        parser.error("give either --known with --indices, or --fraction")

    if args.bounds == "explicit":
        if not args.bounds_file:
            raise CliError("--bounds explicit needs --bounds-file")
        bounds = _read_bounds(args.bounds_file, released.d)
    else:
        if original is None:
            raise CliError("bounds unavailable: --bounds from-data needs --original or --truth")
        bounds = bounds_of(original)

    report = ak_ica_attack(released, known, idx, bounds, truth=truth, seed=seed)
    rio.write_csv(args.out, report.reconstructed, names=released.names)
    _emit_json(report.to_json_dict(), args.report)
    if not report.converged:
        print("warning: ICA did not converge; see report", file=sys.stderr)
    return 0


def _bench_data(args):
    if args.input:
        return rio.read_csv(args.input)
    d, n = args.synthetic
    return synthetic_sources(d, n, args.data_seed)


def cmd_bench(args, parser) -> int:
    if args.input is None and args.synthetic is None:
        parser.error("bench needs --synthetic d=<int>,N=<int> or --input")
    data = _bench_data(args)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    result = run_figure1_sweep(data, args.ns, args.fractions, args.seeds, jobs=jobs)
    rio.write_sweep_csv(args.out, result.cells)
    summary_path = args.summary or os.path.splitext(args.out)[0] + ".summary.json"
    rio.write_json(summary_path, result.summary())
    print(f"{len(result.cells)} cells written to {args.out}")
    for g in result.summary()["groups"]:
        mean = "nan" if g["mean"] is None else f"{g['mean']:.4f}"
        print(f"n={g['n']} fraction={g['fraction']} mean={mean} non_converged={g['non_converged']}")
    return 0


def cmd_cluster(args, parser) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    partitioning, unit = rio.read_release_metadata(args.meta)
    raw_a, raw_b = rio.read_csv(args.a), rio.read_csv(args.b)
    if raw_a.values.shape != raw_b.values.shape:
        raise CliError(
            f"released logs differ in shape: {raw_a.values.shape} vs {raw_b.values.shape}"
        )
    if not unit:
        raise CliError("released logs must be unit-normalised for distance computation")
    y_a = Dataset(raw_a.values, unit_normalized=True)
    y_b = Dataset(raw_b.values, unit_normalized=True)
    res = cluster_distances(y_a, y_b, partitioning, args.k, seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("slot,distance,label\n")
        for j, (dist, lab) in enumerate(zip(res.distances, res.clustering.assignments)):
            fh.write(f"{j},{float(dist)!r},{int(lab)}\n")
    sizes = np.bincount(res.clustering.assignments, minlength=args.k)
    print("cluster sizes: " + ",".join(str(int(s)) for s in sizes))
    return 0


def cmd_evaluate(args, parser) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.experiment1:
        reports = [run_experiment1(args.records, args.fraction, s) for s in args.seeds]
        out = {
            "experiment": 1,
            "records": args.records,
            "fraction": args.fraction,
            "similarity": [r.similarity for r in reports],
            "mean_similarity": float(np.mean([r.similarity for r in reports])),
        }
        _emit_json(out, args.out)
        return 0
    if not (args.original and args.released):
        parser.error("evaluate needs --original and --released (or --experiment1)")
    x = rio.read_csv(args.original)
    y = rio.read_csv(args.released)
    if not args.no_normalize:
        x, _ = normalize_to_unit(x)
    if x.values.shape != y.values.shape:
        raise CliError(f"shape mismatch: {x.values.shape} vs {y.values.shape}")
    plain = kmeans(x.records, args.k, seed)
    rotated = kmeans(y.records, args.k, seed)
    out = {
        "difference_covariance": difference_covariance(x, y),
        "cluster_agreement": cluster_agreement(plain, rotated),
        "k": args.k,
        "seed": seed,
    }
    _emit_json(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rotshield",
        description="Rotation perturbation for privacy-preserving clustering, and the ICA attack on it.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("perturb", help="normalise, partition and rotate a CSV dataset")
    pp.add_argument("--input", required=True)
    pp.add_argument("--n", type=_positive_int, default=1, help="number of parts (1 = single rotation)")
    pp.add_argument("--seed", type=int, help="master seed of the key")
    pp.add_argument("--out", required=True, help="released CSV")
    pp.add_argument("--key", required=True, help="secret key JSON")
    pp.add_argument("--meta", help="public metadata JSON (default: <out>.meta.json)")
    pp.add_argument("--no-normalize", action="store_true", help="rotate raw records (no unit scaling)")
    pp.add_argument("--force", action="store_true")
    pp.set_defaults(func=cmd_perturb)

    pa = sub.add_parser("attack", help="run the AK-ICA attack on released data")
    pa.add_argument("--released", required=True)
    pa.add_argument("--known", help="CSV of known original records")
    pa.add_argument("--indices", help="positions of the known records, one per line")
    pa.add_argument("--fraction", type=_fraction, help="sample this fraction of --original as known")
    pa.add_argument("--original", help="original data to draw known records and bounds from")
    pa.add_argument("--truth", help="ground truth; enables the accuracy field")
    pa.add_argument("--bounds", choices=("from-data", "explicit"), default="from-data")
    pa.add_argument("--bounds-file", help="CSV with min,max columns, one row per attribute")
    pa.add_argument("--seed", type=int)
    pa.add_argument("--out", required=True, help="reconstructed CSV")
    pa.add_argument("--report", help="report JSON (default: stdout)")
    pa.set_defaults(func=cmd_attack)

    pb = sub.add_parser("bench", help="attack accuracy sweep over n, fractions and seeds")
    pb.add_argument("--ns", type=_int_list, required=True)
    pb.add_argument("--fractions", type=_fraction_list, required=True)
    pb.add_argument("--seeds", type=_seed_list, required=True, help="count (0..k-1) or comma list")
    src = pb.add_mutually_exclusive_group()
    src.add_argument("--synthetic", type=_synthetic_spec, help="d=<int>,N=<int>")
    src.add_argument("--input")
    pb.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic data")
    pb.add_argument("--out", default="sweep.csv")
    pb.add_argument("--summary", help="summary JSON (default: <out>.summary.json)")
    pb.add_argument("--jobs", type=_positive_int)
    pb.set_defaults(func=cmd_bench)

    pc = sub.add_parser("cluster", help="third-party clustering of per-slot log distances")
    pc.add_argument("--a", required=True, help="first released log CSV")
    pc.add_argument("--b", required=True, help="second released log CSV")
    pc.add_argument("--meta", required=True, help="public metadata JSON written by perturb")
    pc.add_argument("--k", type=_positive_int, default=2)
    pc.add_argument("--seed", type=int)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_cluster)

    pe = sub.add_parser("evaluate", help="privacy score and clustering utility, or the KDE experiment")
    pe.add_argument("--original")
    pe.add_argument("--released")
    pe.add_argument("--k", type=_positive_int, default=3)
    pe.add_argument("--no-normalize", action="store_true")
    pe.add_argument("--experiment1", action="store_true")
    pe.add_argument("--records", type=_positive_int, default=10000)
    pe.add_argument("--fraction", type=_fraction, default=0.1)
    pe.add_argument("--seeds", type=_seed_list, default=list(range(10)))
    pe.add_argument("--seed", type=int)
    pe.add_argument("--out")
    pe.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (CliError, *RUNTIME_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
