"""Benchmark orchestration: recall/efficiency sweeps and the ``gann`` CLI."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .build import build_index
from .config import settings
from .core import stream
from .data import (
    complexity_report,
    gen_noise_queries,
    gen_powerlaw,
    ground_truth,
    load_ground_truth,
    load_vecs,
    noise_label,
    save_vecs,
    write_complexity_csv,
)
from .diversify import Diversifier
from .errors import DataFormatError, DimensionMismatchError, GannError, ParameterError
from .graph import LayeredGraph, PartitionedIndex
from .models import (
    BuildAlgo,
    BuildParams,
    DCMode,
    NDKind,
    NoiseSpec,
    PowerLawSpec,
    SearchParams,
    SSKind,
    SweepRow,
    SweepSpec,
)
from .search import recall, search_index
from .seeds import load_bundle, save_bundle

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
NOISE_PICK_STREAM = 0x4E4F_4953_4500_0000

WARM_UP_NOTE = (
    "one untimed warm-up pass over the workload precedes timing; "
    "caches are not flushed between phases"
)


def sidecar_path(index_path: str) -> Path:
    """Build-report JSON written next to an index."""
    return Path(f"{index_path}.json")


def _labels(index_path: str, index: object, seed_kind: Optional[SSKind]) -> Dict[str, str]:
    side = sidecar_path(index_path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        return {"method": meta["method"], "nd": meta["nd"], "ss": meta["ss"]}
    if isinstance(index, PartitionedIndex):
        method = f"dc-{index.mode.value}"
    else:
        method = "graph"
    ss = SSKind.SN.value if isinstance(index, LayeredGraph) else None
    ss = ss or (seed_kind.value if seed_kind else "centroid")
    return {"method": method, "nd": "unknown", "ss": ss}


def _trimmed(totals: Sequence[float], trim: int) -> List[int]:
    """Indices of repeats kept after dropping ``trim`` fastest and slowest."""
    order = sorted(range(len(totals)), key=lambda i: totals[i])
    if len(order) <= 2 * trim:
        logger.warning(
            "%d repeats cannot drop %d from each end; keeping all", len(order), trim
        )
        return order
    return order[trim : len(order) - trim]


def run_sweep(spec: SweepSpec) -> List[SweepRow]:
    """Run every (beam_l, nprobe) combination and write the CSV plus metadata."""
    index, seed_index = load_bundle(spec.index_path)
    vectors = load_vecs(spec.data_path)
    queries = load_vecs(spec.query_path)
    truth, _ = load_ground_truth(spec.gt_ids_path)
    if queries.d != vectors.d:
        raise DimensionMismatchError(f"queries have d={queries.d}, data has d={vectors.d}")
    if truth.shape[0] != queries.n:
        raise DataFormatError(
            f"ground truth has {truth.shape[0]} rows for {queries.n} queries", 0
        )
    if truth.shape[1] < spec.k:
        raise DataFormatError(
            f"ground truth holds {truth.shape[1]} ids per query, need {spec.k}", 0
        )
    labels = _labels(spec.index_path, index, seed_index.kind if seed_index else None)

    def workload(params: SearchParams) -> Tuple[List[float], List[float], List[int]]:
        latencies, recalls, calcs = [], [], []
        for i in range(queries.n):
            start = time.perf_counter()
            result = search_index(index, seed_index, vectors, queries[i], params, i)
            latencies.append(time.perf_counter() - start)
            recalls.append(recall(result, truth[i], spec.k))
            calcs.append(result.distance_calcs)
        return latencies, recalls, calcs

    def params(beam_l: int, nprobe: int) -> SearchParams:
        return SearchParams(
            k=spec.k, beam_l=beam_l, seed_count_s=spec.seed_count_s, nprobe=nprobe
        )

    workload(params(spec.beam_widths[0], spec.nprobes[0]))

    rows: List[SweepRow] = []
    for nprobe in spec.nprobes:
        for beam_l in spec.beam_widths:
            runs = [workload(params(beam_l, nprobe)) for _ in range(spec.repeats)]
            kept = _trimmed([sum(r[0]) for r in runs], spec.trim)
            latencies = np.concatenate([runs[i][0] for i in kept])
            _, recalls, calcs = runs[0]
            row = SweepRow(
                **labels,
                beam_l=beam_l,
                nprobe=nprobe,
                recall=float(np.mean(recalls)),
                distance_calcs=float(np.mean(calcs)),
                latency_mean=float(latencies.mean()),
                latency_p99=float(np.percentile(latencies, 99)),
            )
            logger.info(
                "beam_l=%d nprobe=%d recall=%.4f calcs=%.1f",
                beam_l,
                nprobe,
                row.recall,
                row.distance_calcs,
            )
            rows.append(row)

    table = pd.DataFrame(
        [row.model_dump() for row in rows], columns=list(SweepRow.model_fields)
    )
    table.to_csv(spec.out_path, index=False)
    meta = {
        "index": spec.index_path,
        "queries": queries.n,
        "k": spec.k,
        "repeats": spec.repeats,
        "trim": spec.trim,
        "kept_repeats": len(_trimmed([0.0] * spec.repeats, spec.trim)),
        "warm_up": True,
        "seed": spec.seed,
        "protocol": WARM_UP_NOTE,
        **labels,
    }
    meta_path = Path(f"{spec.out_path}.meta.json")
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------- CLI


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from exc


def _cmd_gen(args: argparse.Namespace) -> int:
    spec = PowerLawSpec(
        n=args.n, d=args.d, exponent_a=args.pow_a, scale_k=args.scale_k, seed=args.seed
    )
    save_vecs(args.out, gen_powerlaw(spec).values, "fvecs")
    logger.info(
        "wrote %d x %d power-law vectors (a=%g) to %s", spec.n, spec.d, spec.exponent_a, args.out
    )
    return EXIT_OK


def _cmd_gt(args: argparse.Namespace) -> int:
    vectors = load_vecs(args.data)
    queries = load_vecs(args.queries)
    if not 1 <= args.k <= vectors.n:
        raise ParameterError(f"k={args.k} must be in [1, {vectors.n}]")
    if queries.d != vectors.d:
        raise DimensionMismatchError(f"queries have d={queries.d}, data has d={vectors.d}")
    ids, dists = ground_truth(vectors, queries, args.k)
    save_vecs(args.out_ids, ids, "ivecs")
    save_vecs(args.out_dists, dists, "fvecs")
    return EXIT_OK


def _cmd_noise(args: argparse.Namespace) -> int:
    spec = NoiseSpec(variance_sigma2=args.variance, seed=args.seed)
    base = load_vecs(args.data)
    if args.count < 1:
        raise ParameterError("count must be >= 1")
    picks = stream(spec.seed, NOISE_PICK_STREAM).choice(
        base.n, size=args.count, replace=args.count > base.n
    )
    queries = gen_noise_queries(base, picks.tolist(), spec)
    save_vecs(args.out, queries.values, "fvecs")
    label = noise_label(spec.variance_sigma2)
    logger.info("wrote %d queries (%s) to %s", queries.n, label, args.out)
    return EXIT_OK


def _build_params(args: argparse.Namespace) -> BuildParams:
    values = {
        "nd": args.nd,
        "ss": args.ss,
        "cap_r": args.R,
        "beam_l_build": args.L,
        "m": args.M,
        "alpha": args.alpha,
        "theta_deg": args.theta,
        "leaf_size": args.leaf_size,
        "threads": args.threads,
        "deterministic": args.deterministic,
        "seed": args.seed,
        "seed_count_s": args.s,
        "shuffle": args.shuffle,
    }
    return BuildParams(**{k: v for k, v in values.items() if v is not None})


def _cmd_build(args: argparse.Namespace) -> int:
    params = _build_params(args)
    algo = BuildAlgo(args.algo)
    mode = DCMode(args.dc_mode)
    vectors = load_vecs(args.data)
    result = build_index(vectors, params, algo, mode)
    save_bundle(result.index, result.seed_index, args.out)
    method = f"dc-{mode.value}" if algo == BuildAlgo.DC else algo.value
    meta = {
        "method": method,
        "nd": Diversifier.from_params(params).label,
        "ss": params.ss.value,
        "data": args.data,
        "params": params.model_dump(mode="json"),
        "report": result.report.model_dump(mode="json"),
    }
    sidecar_path(args.out).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    print(result.report.model_dump_json(indent=2))
    return EXIT_OK


def _cmd_complexity(args: argparse.Namespace) -> int:
    vectors = load_vecs(args.data)
    queries = load_vecs(args.queries)
    report = complexity_report(queries, vectors, args.k)
    write_complexity_csv(report, args.out)
    logger.info(
        "LID mean %.3f median %.3f, LRC mean %.3f median %.3f",
        report.lid_mean, report.lid_median, report.lrc_mean, report.lrc_median,
    )
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = SweepSpec(
        index_path=args.index,
        data_path=args.data,
        query_path=args.queries,
        gt_ids_path=args.gt_ids,
        out_path=args.out,
        k=args.k,
        beam_widths=args.l_list,
        nprobes=args.nprobe_list,
        seed_count_s=args.s,
        repeats=args.repeats,
        trim=args.trim,
        seed=args.seed,
    )
    run_sweep(spec)
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .api import run_server

    run_server(index_path=args.index, data_path=args.data, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gann", description="Graph-based ANN search toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="power-law dataset (fvecs)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--pow-a", type=float, default=0.0)
    p.add_argument("--scale-k", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("gt", help="brute-force ground truth (ivecs + fvecs)")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-ids", required=True)
    p.add_argument("--out-dists", required=True)
    p.set_defaults(func=_cmd_gt)

    p = sub.add_parser("noise", help="Gaussian-noise query workload")
    p.add_argument("--data", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--variance", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_noise)

    p = sub.add_parser("build", help="build a GANN index")
    p.add_argument("--data", required=True)
    p.add_argument("--algo", choices=[a.value for a in BuildAlgo], default="ii")
    p.add_argument("--nd", choices=[k.value for k in NDKind], default=NDKind.RND.value)
    p.add_argument("--ss", choices=[k.value for k in SSKind], default=SSKind.KS.value)
    p.add_argument("--R", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--M", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--s", type=int)
    p.add_argument("--leaf-size", type=int)
    p.add_argument("--dc-mode", choices=[m.value for m in DCMode], default="merged")
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--shuffle", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("complexity", help="per-query LID / LRC CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=settings.complexity_k)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_complexity)

    p = sub.add_parser("sweep", help="recall / distance-calculation sweep CSV")
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt-ids", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--l-list", type=_int_list, required=True)
    p.add_argument("--nprobe-list", type=_int_list, default=[1])
    p.add_argument("--s", type=int)
    p.add_argument("--repeats", type=int, default=settings.sweep_repeats)
    p.add_argument("--trim", type=int, default=settings.sweep_trim)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("serve", help="run the query server")
    p.add_argument("--index", default=settings.index_path)
    p.add_argument("--data", default=settings.data_path)
    p.add_argument("--host", default=settings.host)
    p.add_argument("--port", type=int, default=settings.port)
    p.set_defaults(func=_cmd_serve)
    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; 0 ok, 1 usage or parameter error, 2 data error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        return handler(args)
    except (ParameterError, ValidationError) as exc:
        print(f"gann {args.command}: parameter error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GannError, OSError) as exc:
        print(f"gann {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
