"""Command-line driver.

Subcommands: gen, pack, run, eval-predictor, sweep-alpha, calibrate, bench.
Every subcommand that draws random numbers takes ``--seed``.

Exit codes: 0 ok, 2 usage error, 3 missing file, 4 bad file format,
5 dimension mismatch, 6 invalid value.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import set_threads
from .benchmark import gemv_timing
from .calibration import DEFAULT_GRID, DEFAULT_PRECISION_TARGET, select_alpha, sweep_alpha
from .metrics import comparator_memory, op_counts, score_predictor, signpack_memory, sign_agreement
from .model_io import (MODES, DimensionMismatchError, GenSpec, ModelFormatError, attach_signpack,
                       default_gate_row_shift, gen_synthetic, load_inputs, random_inputs, read_model,
                       read_signpack, write_model, write_signpack)
from .predictor import AlphaSchedule, parse_alpha
from .mlp_engine import stack_forward
from .tensor_core import NonFiniteError, ShapeError

log = logging.getLogger("signsparse")

THREADS_ENV = "SIGNSPARSE_THREADS"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_MISMATCH = 5
EXIT_VALUE = 6

RUN_COLUMNS = ("layer", "alpha_x100", "predicted_sparsity", "h1_sparsity", "h3_sparsity")
EVAL_COLUMNS = ("layer", "alpha_x100", "precision", "recall", "predicted_sparsity",
                "true_sparsity", "agreement")


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALUE):
        super().__init__(message)
        self.code = code


def _alpha_arg(text):
    try:
        return parse_alpha(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid_arg(text):
    return [_alpha_arg(t) for t in text.split(",") if t.strip()]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help=f"kernel threads (default: ${THREADS_ENV} or all)")
    common.add_argument("-v", "--verbose", action="store_true")

    def out_opt(p, help="output file (default: stdout)"):
        p.add_argument("-o", "--output", default=None, help=help)

    def input_opts(p):
        p.add_argument("--seed", type=int, default=None, help="seed for generated inputs")
        p.add_argument("--inputs", type=int, default=1, help="number of generated inputs")
        p.add_argument("--input-mean", type=float, default=0.0,
                       help="mean of generated inputs (use the model's input mean)")
        p.add_argument("--input-file", default=None, help=".npy array of shape (n, d)")

    def alpha_opts(p, required=False):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--alpha", type=_alpha_arg, default=None, help="decimal alpha, or 'inf'")
        g.add_argument("--schedule", default=None, help="AlphaSchedule JSON from `calibrate`")

    parser = argparse.ArgumentParser(prog="signsparse", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic model")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=MODES, default="iid_gaussian")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--gate-row-shift", type=float, default=None,
                   help="sparsity_biased only (default: aim at 90%% first-layer sparsity)")
    p.add_argument("--input-mean", type=float, default=None,
                   help="sparsity_biased only (default 1.0)")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--signs", default=None, help="also write the sign sidecar here")
    out_opt(p, "model file to write")

    p = sub.add_parser("pack", parents=[common], help="write the sign sidecar of a model")
    p.add_argument("--model", required=True)
    out_opt(p, "sidecar file to write")

    p = sub.add_parser("run", parents=[common], help="run the stack, print sparsity + checksum")
    p.add_argument("--model", required=True)
    p.add_argument("--signs", default=None, help="sign sidecar to use instead of repacking")
    p.add_argument("--mode", choices=("dense", "sparse"), default="sparse")
    alpha_opts(p)
    input_opts(p)
    out_opt(p)

    p = sub.add_parser("eval-predictor", parents=[common], help="per-layer precision/recall CSV")
    p.add_argument("--model", required=True)
    alpha_opts(p)
    input_opts(p)
    out_opt(p)

    for name, help in (("sweep-alpha", "precision/recall/sparsity/h3 error per (layer, alpha)"),
                       ("calibrate", "pick per-layer alpha, emit AlphaSchedule JSON")):
        p = sub.add_parser(name, parents=[common], help=help)
        p.add_argument("--model", required=True)
        p.add_argument("--grid", type=_grid_arg, default=list(DEFAULT_GRID),
                       help="comma separated decimal alphas (default 1.00,1.01,1.02,1.03,1.05,1.10)")
        input_opts(p)
        out_opt(p)
        if name == "calibrate":
            p.add_argument("--target", type=float, default=DEFAULT_PRECISION_TARGET,
                           help="precision target for early layers")
            p.add_argument("--early-layers", type=int, default=None,
                           help="layers eligible for alpha > 1 (default: half the stack)")
            p.add_argument("--sweep-output", default=None, help="also write the sweep CSV here")

    p = sub.add_parser("bench", parents=[common], help="op counts, memory and GEMV timing")
    p.add_argument("--d", type=int, default=5120)
    p.add_argument("--k", type=int, default=13824)
    p.add_argument("--layers", type=int, default=40)
    p.add_argument("--sparsity", type=float, default=0.92, help="sparsity for the sparse MAC count")
    p.add_argument("--rank", type=int, default=1024, help="comparator predictor rank")
    p.add_argument("--report", choices=("opcounts", "timing", "all"), default="opcounts")
    p.add_argument("--timing", action="store_true", help="same as adding --report timing")
    p.add_argument("--skip-ratio", type=float, default=0.9)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=int, default=15)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    out_opt(p)
    return parser


def _emit(text: str, output):
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _require(path, what):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}", EXIT_MISSING)
    return p


def _load_model(args):
    model = read_model(_require(args.model, "model file"))
    signs = getattr(args, "signs", None)
    if signs:
        model = attach_signpack(model, read_signpack(_require(signs, "sign sidecar"), model))
    return model


def _inputs(args, d):
    if args.input_file:
        return load_inputs(_require(args.input_file, "input file"), d)
    if args.seed is None:
        raise CliError("generated inputs need --seed (or pass --input-file)", EXIT_USAGE)
    if args.inputs < 1:
        raise CliError("--inputs must be >= 1", EXIT_USAGE)
    return random_inputs(d, args.inputs, args.seed, args.input_mean)


def _schedule(args, layers, default=None):
    if args.schedule:
        data = json.loads(_require(args.schedule, "schedule file").read_text(encoding="utf-8"))
        sched = AlphaSchedule.from_dict(data)
        if len(sched) != layers:
            raise CliError(f"schedule has {len(sched)} entries for {layers} layers", EXIT_MISMATCH)
        return sched
    alpha = args.alpha if args.alpha is not None else default
    if alpha is None:
        raise CliError("sparse mode needs --alpha or --schedule", EXIT_USAGE)
    return AlphaSchedule.uniform(alpha, layers)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_gen(args):
    if args.output is None:
        raise CliError("gen needs -o/--output", EXIT_USAGE)
    shift, mean = args.gate_row_shift, args.input_mean
    if args.mode == "sparsity_biased":
        mean = 1.0 if mean is None else mean
        shift = default_gate_row_shift(args.d, mean) if shift is None else shift
    elif shift is not None or mean is not None:
        raise CliError("--gate-row-shift/--input-mean only apply to --mode sparsity_biased", EXIT_USAGE)
    spec = GenSpec(args.layers, args.d, args.k, args.seed, args.mode, shift, mean, args.theta)
    model = gen_synthetic(spec)
    write_model(args.output, model)
    if args.signs:
        write_signpack(args.signs, [l.gate_signs for l in model.layers])
    info = {"layers": spec.layers, "d": spec.d, "k": spec.k, "mode": spec.mode, "seed": spec.seed}
    if spec.mode == "sparsity_biased":
        info.update(gate_row_shift=shift, input_mean=mean)
    log.info("wrote %s %s", args.output, info)
    print(json.dumps(info, sort_keys=True))


def cmd_pack(args):
    if args.output is None:
        raise CliError("pack needs -o/--output", EXIT_USAGE)
    model = _load_model(args)
    write_signpack(args.output, [l.gate_signs for l in model.layers])
    print(f"wrote {len(model)} layers of sign words to {args.output}")


def output_checksum(outputs) -> str:
    h = hashlib.sha256()
    for y in outputs:
        h.update(np.ascontiguousarray(y, dtype="<f4").tobytes())
    return h.hexdigest()


def cmd_run(args):
    model = _load_model(args)
    xs = _inputs(args, model.d)
    sched = _schedule(args, len(model)) if args.mode == "sparse" else None
    L = len(model)
    pred = np.zeros(L)
    h1 = np.zeros(L)
    h3 = np.zeros(L)
    outputs = []
    for x in xs:
        y, traces = stack_forward(model, x, args.mode, sched)
        outputs.append(y)
        for li, tr in enumerate(traces):
            pred[li] += tr.predicted_sparsity
            h1[li] += tr.h1_sparsity
            h3[li] += tr.h3_sparsity
    n = len(xs)
    rows = [[li, sched.per_layer[li] if sched is not None else "", f"{pred[li] / n:.6f}",
             f"{h1[li] / n:.6f}", f"{h3[li] / n:.6f}"] for li in range(L)]
    text = _csv(RUN_COLUMNS, rows) + f"checksum,{output_checksum(outputs)}\n"
    _emit(text, args.output)


def cmd_eval(args):
    model = _load_model(args)
    xs = _inputs(args, model.d)
    sched = _schedule(args, len(model), default=100)
    L = len(model)
    acc = np.zeros((L, 5))
    for x in xs:
        _, traces = stack_forward(model, x, "sparse", sched, with_truth=True)
        for li, tr in enumerate(traces):
            s = score_predictor(tr.predicted, tr.truth)
            acc[li] += (s.precision, s.recall, tr.predicted.mean(), tr.truth.mean(),
                        sign_agreement(tr.predicted, tr.truth))
    acc /= len(xs)
    rows = [[li, sched.per_layer[li]] + [f"{v:.6f}" for v in acc[li]] for li in range(L)]
    _emit(_csv(EVAL_COLUMNS, rows), args.output)


def cmd_sweep(args):
    model = _load_model(args)
    table = sweep_alpha(model, _inputs(args, model.d), args.grid)
    _emit(table.to_csv(), args.output)


def cmd_calibrate(args):
    model = _load_model(args)
    grid = sorted(args.grid)
    table = sweep_alpha(model, _inputs(args, model.d), grid)
    if args.sweep_output:
        Path(args.sweep_output).write_text(table.to_csv(), encoding="utf-8")
    sched = select_alpha(table, args.target, args.early_layers)
    payload = sched.to_dict()
    payload["precision_target"] = args.target
    payload["grid_x100"] = grid
    _emit(json.dumps(payload, indent=2) + "\n", args.output)


def cmd_bench(args):
    reports = {"opcounts"} if args.report == "opcounts" else (
        {"timing"} if args.report == "timing" else {"opcounts", "timing"})
    if args.timing:
        reports.add("timing")
    result = {}
    lines = []
    if "opcounts" in reports:
        oc = op_counts(args.d, args.k, args.sparsity, args.rank)
        sp_bytes, sp_mib = signpack_memory(args.d, args.k, args.layers)
        cmp_bytes, cmp_mib = comparator_memory(args.d, args.k, args.layers, args.rank)
        result["opcounts"] = {
            "d": args.d, "k": args.k, "layers": args.layers, "sparsity": args.sparsity,
            "rank": args.rank,
            "predictor_word_ops": oc.predictor_word_ops,
            "dense_mlp_macs": oc.dense_mlp_macs,
            "sparse_mlp_macs": oc.sparse_mlp_macs,
            "comparator_predictor_macs": oc.comparator_predictor_macs,
            "signpack_bytes": sp_bytes, "signpack_mib": sp_mib,
            "comparator_bytes": cmp_bytes, "comparator_mib": cmp_mib,
            "memory_ratio": cmp_bytes / sp_bytes,
        }
        lines += [
            f"per-layer op counts (d={args.d}, k={args.k}, sparsity={args.sparsity}, rank={args.rank})",
            f"  predictor_word_ops          {oc.predictor_word_ops:,} ({oc.predictor_word_ops:.3e})",
            f"  dense_mlp_macs              {oc.dense_mlp_macs:,} ({oc.dense_mlp_macs:.3e})",
            f"  sparse_mlp_macs             {oc.sparse_mlp_macs:,} ({oc.sparse_mlp_macs:.3e})",
            f"  comparator_predictor_macs   {oc.comparator_predictor_macs:,} "
            f"({oc.comparator_predictor_macs:.3e})",
            f"memory over {args.layers} layers",
            f"  signpack memory             {sp_bytes:,} bytes = {sp_mib:.1f} MiB",
            f"  comparator memory (fp16)    {cmp_bytes:,} bytes = {cmp_mib:.1f} MiB",
            f"  comparator / signpack       {cmp_bytes / sp_bytes:.2f}x",
        ]
    if "timing" in reports:
        if args.seed is None:
            raise CliError("timing needs --seed", EXIT_USAGE)
        t = gemv_timing(args.d, args.k, args.skip_ratio, args.seed,
                        warmup=args.warmup, repeats=args.repeats)
        result["timing"] = t
        lines += [
            f"GEMV timing (d={args.d}, k={args.k}, skip ratio {t['skip_ratio']:.3f}, "
            f"warmup {t['warmup']}, median of {t['repeats']})",
            f"  dense   {t['dense_median_s'] * 1e3:.3f} ms",
            f"  sparse  {t['sparse_median_s'] * 1e3:.3f} ms",
            f"  sparse/dense {t['sparse_over_dense']:.3f}",
            "machine " + json.dumps(t["machine"], sort_keys=True),
        ]
    text = json.dumps(result, indent=2, sort_keys=True) + "\n" if args.json else "\n".join(lines) + "\n"
    _emit(text, args.output)


COMMANDS = {
    "gen": cmd_gen,
    "pack": cmd_pack,
    "run": cmd_run,
    "eval-predictor": cmd_eval,
    "sweep-alpha": cmd_sweep,
    "calibrate": cmd_calibrate,
    "bench": cmd_bench,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    if threads is not None:
        if threads < 1:
            print(f"error: --threads must be >= 1, got {threads}", file=sys.stderr)
            return EXIT_USAGE
        used = set_threads(threads)
        if used != threads:
            log.warning("only %d kernel threads available, using %d", used, used)
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (DimensionMismatchError, ShapeError) as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ModelFormatError as exc:
        print(f"error: bad file format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NonFiniteError, ValueError) as exc:
        print(f"error: invalid value: {exc}", file=sys.stderr)
        return EXIT_VALUE
    return EXIT_OK


def main() -> int:
    return run_cli()
