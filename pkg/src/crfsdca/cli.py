"""Command-line front end: train, evaluate, gap-report, report.

Exit codes: 0 on success (for ``train``: converged), 2 when training stops on
its epoch budget, 1 on any error including bad flag combinations.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import data as data_io
from .errors import CrfSdcaError
from .inference import MarginalSet  # noqa: F401  (re-exported for state tooling)
from .metrics import MetricsWriter, read_metrics, token_error_rate
from .objective import CrfProblem, OracleCounter, batch_evaluate
from .sampling import SamplerConfig, nonuniformity
from .sdca import LineSearchConfig, TrainConfig, init_dual, sdca_train

SAMPLER_FLAGS = {
    "uniform": "uniform",
    "gap": "gap",
    "importance": "importance",
    "gap-importance": "gap_importance",
    "max": "max",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for budget exhaustion.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_dataset(path: str, fmt: str, vocabulary=None, labels=None):
    if fmt == "conll":
        return data_io.load_conll(path, vocabulary=vocabulary, labels=labels)
    if fmt == "ocr":
        return data_io.load_ocr(path)
    if fmt == "synthetic":
        with open(path, encoding="utf-8") as handle:
            spec = data_io.SyntheticSpec(**json.load(handle))
        return data_io.generate_synthetic(spec)
    raise CrfSdcaError(f"unknown format {fmt!r}")


def _add_data_flags(parser, with_format=True):
    parser.add_argument("--data", required=True, help="dataset path")
    if with_format:
        parser.add_argument(
            "--format",
            choices=("conll", "ocr", "synthetic"),
            default="conll",
            help="dataset format; synthetic reads a JSON generator spec",
        )


def build_parser() -> _Parser:
    parser = _Parser(prog="crfsdca", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a chain tagger by dual coordinate ascent")
    _add_data_flags(train)
    train.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="l2 regularization (default: 1/n)")
    train.add_argument("--sampler", choices=sorted(SAMPLER_FLAGS), default="gap")
    train.add_argument("--nonuniform-ratio", type=float, default=0.8)
    train.add_argument("--epsilon", type=float, default=1e-2,
                       help="uniform mass blended into the initial point masses")
    train.add_argument("--line-search-precision", type=float, default=None,
                       help="stop threshold on the Newton step length (default 1e-3)")
    train.add_argument("--fixed-step", action="store_true",
                       help="use the guaranteed fixed step size instead of line search")
    train.add_argument("--stop-gap", type=float, default=1e-6)
    train.add_argument("--max-epochs", type=float, default=200.0)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--metrics-out", default=None, help="CSV telemetry path")
    train.add_argument("--model-out", default=None, help="trained model path")
    train.add_argument("--state-out", default=None, help="dual-state checkpoint path (npz)")
    train.add_argument("--true-gap-every", type=float, default=5.0,
                       help="epochs between full-evaluation telemetry rows")
    train.add_argument("--metrics-every", type=float, default=1.0,
                       help="epochs between lightweight telemetry rows")
    train.add_argument("--test-data", default=None,
                       help="held-out file in the same format, scored at full rows")
    train.add_argument("--figures-dir", default=None,
                       help="render convergence figures into this directory")

    evaluate = sub.add_parser("evaluate", help="token error rate of a saved model")
    _add_data_flags(evaluate)
    evaluate.add_argument("--model", required=True)

    gap = sub.add_parser("gap-report", help="per-block duality gaps of a checkpoint")
    _add_data_flags(gap)
    source = gap.add_mutually_exclusive_group(required=True)
    source.add_argument("--state", default=None, help="dual-state checkpoint from train")
    source.add_argument("--init-epsilon", type=float, default=None,
                        help="report on a fresh initialization instead of a checkpoint")
    gap.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="regularization for --init-epsilon (default 1/n)")
    gap.add_argument("--out", default=None, help="write the per-block table here (CSV)")
    gap.add_argument("--figure", default=None, help="render the gap figure here")

    rep = sub.add_parser("report", help="render figures from a metrics CSV")
    rep.add_argument("--metrics", required=True)
    rep.add_argument("--out-dir", required=True)
    rep.add_argument("--reference-primal", type=float, default=None)
    return parser


def cmd_train(args) -> int:
    if args.fixed_step and args.line_search_precision is not None:
        raise CrfSdcaError(
            "--fixed-step disables the line search; --line-search-precision conflicts"
        )
    dataset = _load_dataset(args.data, args.format)
    test_dataset = None
    if args.test_data is not None:
        test_dataset = _load_dataset(
            args.test_data, args.format,
            vocabulary=dataset.vocabulary.freeze() if args.format == "conll" else None,
            labels=dataset.labels if args.format == "conll" else None,
        )

    line_search = LineSearchConfig(
        sub_precision=args.line_search_precision
        if args.line_search_precision is not None
        else 1e-3,
        mode="fixed_step" if args.fixed_step else "newton_safeguarded",
    )
    config = TrainConfig(
        lam=args.lam,
        epsilon=args.epsilon,
        sampler=SamplerConfig(
            scheme=SAMPLER_FLAGS[args.sampler],
            nonuniform_ratio=args.nonuniform_ratio,
        ),
        line_search=line_search,
        stop_gap=args.stop_gap,
        max_epochs=args.max_epochs,
        seed=args.seed,
        metrics_every=args.metrics_every,
        true_gap_every=args.true_gap_every,
    )

    sink = MetricsWriter(args.metrics_out) if args.metrics_out else None
    try:
        result = sdca_train(dataset, config, test_dataset=test_dataset, metrics_sink=sink)
    finally:
        if sink is not None:
            sink.close()

    if args.model_out:
        model = data_io.CrfModel(
            weights=result.state.weights.array.copy(),
            lam=result.problem.lam,
            labels=dataset.labels,
            vocabulary=dataset.vocabulary,
        )
        data_io.save_model(args.model_out, model)
    if args.state_out:
        data_io.save_state(
            args.state_out, result.state, dataset.vocabulary.size, dataset.labels.names
        )
    if args.figures_dir:
        import os

        from .report import render_convergence, render_test_error

        os.makedirs(args.figures_dir, exist_ok=True)
        render_convergence(result.metrics, os.path.join(args.figures_dir, "convergence.png"))
        if any(r.test_error is not None for r in result.metrics):
            render_test_error(result.metrics, os.path.join(args.figures_dir, "test_error.png"))

    print(
        f"{'converged' if result.converged else 'budget exhausted'} "
        f"after {result.state.updates} updates "
        f"({result.state.updates / dataset.n:.2f} epochs): "
        f"primal {result.primal!r}, dual {result.dual!r}, gap {result.true_gap!r}"
    )
    return 0 if result.converged else 2


def cmd_evaluate(args) -> int:
    model = data_io.load_model(args.model)
    if args.format == "conll":
        dataset = _load_dataset(args.data, args.format,
                                vocabulary=model.vocabulary, labels=model.labels)
    else:
        dataset = _load_dataset(args.data, args.format)
    error = token_error_rate(model.indexer, dataset.sequences, model.weights)
    print(repr(error))
    return 0


def cmd_gap_report(args) -> int:
    dataset = _load_dataset(args.data, args.format)
    if args.state is not None:
        state, label_names, n_attributes = data_io.load_state(args.state)
        if list(label_names) != list(dataset.labels.names):
            raise CrfSdcaError("checkpoint labels do not match the dataset")
        if n_attributes != dataset.vocabulary.size or state.n != dataset.n:
            raise CrfSdcaError("checkpoint shape does not match the dataset")
        problem = CrfProblem(dataset, state.lam)
    else:
        lam = args.lam if args.lam is not None else 1.0 / dataset.n
        problem = CrfProblem(dataset, lam)
        state = init_dual(problem, args.init_epsilon)

    counter = OracleCounter()
    stored = state.gap_estimates.copy()
    primal, dual, true_gaps = batch_evaluate(problem, state, counter)
    chi = nonuniformity(true_gaps) if true_gaps.sum() > 0 else float("nan")

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["block", "stored_estimate", "true_gap", "ratio"])
    for i in range(problem.n):
        ratio = float(stored[i] / true_gaps[i]) if true_gaps[i] > 0 else float("inf")
        writer.writerow([i, repr(float(stored[i])), repr(float(true_gaps[i])), repr(ratio)])
    if args.out:
        out.close()

    print(f"primal: {primal!r}")
    print(f"dual: {dual!r}")
    print(f"mean_true_gap: {float(true_gaps.mean())!r}")
    print(f"mean_stored_estimate: {float(stored.mean())!r}")
    print(f"nonuniformity: {chi!r}")

    if args.figure:
        from .report import render_gap_report

        render_gap_report(stored, true_gaps, chi, args.figure)
    return 0


def cmd_report(args) -> int:
    import os

    from .report import render_convergence, render_test_error

    records = read_metrics(args.metrics)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = [
        render_convergence(
            records,
            os.path.join(args.out_dir, "convergence.png"),
            reference_primal=args.reference_primal,
        )
    ]
    if any(r.test_error is not None for r in records):
        paths.append(render_test_error(records, os.path.join(args.out_dir, "test_error.png")))
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "gap-report": cmd_gap_report,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (CrfSdcaError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"crfsdca: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
