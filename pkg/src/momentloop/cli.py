"""Command-line entry point: ``momentloop <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__

log = logging.getLogger("momentloop")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _require_file(path: str, what: str):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


# ---- subcommands -----------------------------------------------------------


def cmd_synth(args):
    from .synth import SynthSpec, write_dataset

    spec = SynthSpec(t=args.t, d=args.dim)
    records = write_dataset(args.out, args.n, args.seed, spec)
    print(f"wrote {len(records)} clips to {args.out}")


def cmd_train_toy(args):
    from .config import load_config
    from .plotting import plot_loss_history
    from .tensorio import save_weights
    from .training import TOY_CONFIG, evaluate_toy, train_toy

    cfg = load_config(args.config)
    dcfg = cfg.decoder or TOY_CONFIG
    result = train_toy(seed=args.seed, steps=args.steps, lr=args.lr, cfg=dcfg, p=cfg.loss,
                       on_step=lambda s, v: log.info("step %d loss %.6f", s, v))
    save_weights(args.out, result.weights)
    ious = evaluate_toy(result, seed=args.seed + 1000)
    summary = {
        "initial_loss": result.history[0],
        "final_loss": result.history[-1],
        "steps": args.steps,
        "heldout_top1_iou": ious,
    }
    base = os.path.splitext(args.out)[0]
    with open(base + ".history.tsv", "w") as fh:
        fh.write("step\tloss\n")
        for i, v in enumerate(result.history):
            fh.write(f"{i}\t{v!r}\n")
    if args.plot:
        plot_loss_history(result.history, base + ".loss.png")
    print(json.dumps(summary, indent=2))


def cmd_ground(args):
    from .decoder import decode_candidates, forward
    from .io import load_features
    from .tensorio import load_weights

    _require_file(args.weights, "weights")
    _require_file(args.features, "features")
    weights = load_weights(args.weights)
    feats, reg = load_features(args.features)
    trace = forward(feats, reg, weights, weights.cfg)
    cands = decode_candidates(trace, args.duration, args.topk, args.nms)
    print(json.dumps({"query": args.query, "duration": args.duration,
                      "candidates": [m.to_list() for m in cands]}, indent=2))


def cmd_pipeline(args):
    from .config import load_config
    from .http_backend import HttpBackend
    from .io import load_annotations, save_predictions
    from .orchestrator import MockBackend
    from .runner import DecoderGrounder, run_batch

    _require_file(args.annotations, "annotations")
    if args.config:
        _require_file(args.config, "config")
    cfg = load_config(args.config)
    records = load_annotations(args.annotations)
    if args.backend == "mock":
        grounder = None
        if cfg.mock.weights:
            features_dir = cfg.mock.features_dir or args.features_dir
            if not features_dir:
                raise UsageError("decoder grounding needs a features directory (mock.features_dir or --features-dir)")
            grounder = DecoderGrounder(cfg.mock.weights, features_dir, cfg.pipeline.top_k,
                                       cfg.pipeline.nms_threshold)
        backend = MockBackend(seed=cfg.mock.seed, grounder=grounder, zoom_ratio=cfg.pipeline.zoom_ratio)
    else:
        if not cfg.backend.urls:
            raise UsageError("http backend needs backend.urls in the config")
        backend = HttpBackend(cfg.backend)
    preds = run_batch(records, backend, cfg.pipeline, workers=int(cfg.workers),
                      features_dir=args.features_dir)
    save_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")


def cmd_eval(args):
    from .io import load_annotations, load_predictions
    from .plotting import plot_report
    from .runner import compute_report, ensure_dir, eval_records, format_table, format_tsv

    _require_file(args.pred, "predictions")
    _require_file(args.gt, "annotations")
    records = eval_records(load_predictions(args.pred), load_annotations(args.gt))
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report = compute_report(records, metrics, args.thresholds, args.cg_thresholds)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if args.report_dir:
        ensure_dir(args.report_dir)
        with open(os.path.join(args.report_dir, "metrics.json"), "w") as fh:
            fh.write(text + "\n")
        with open(os.path.join(args.report_dir, "metrics.tsv"), "w") as fh:
            fh.write(format_tsv(report))
        with open(os.path.join(args.report_dir, "metrics.txt"), "w") as fh:
            fh.write(format_table(report) + "\n")
        plot_report(report, args.report_dir)
    print(format_table(report) if args.table else text)


def cmd_gradcheck(args):
    from .training import gradient_check, tiny_fixture

    weights, examples = tiny_fixture(args.seed)
    err = gradient_check(weights, examples, eps=args.eps)
    print(f"max relative error: {err:.3e} (tolerance {args.tolerance:.1e})")
    if err > args.tolerance:
        raise DomainFailure(f"gradient check failed: {err:.3e} > {args.tolerance:.1e}")


class DomainFailure(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="momentloop", description="Temporal grounding and role-orchestration toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="write synthetic features and annotations")
    s.add_argument("--t", type=int, default=16, help="frames per clip")
    s.add_argument("--n", type=int, default=3, help="number of clips")
    s.add_argument("--dim", type=int, default=8, help="feature dimension")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-toy", help="fit the decoder on synthetic clips")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="weight manifest path (.json); blob written alongside")
    s.add_argument("--plot", action="store_true", help="also write a loss-curve PNG")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("ground", help="decode candidate moments for one clip")
    s.add_argument("--weights", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--topk", type=int, default=5)
    s.add_argument("--duration", type=float, required=True)
    s.add_argument("--nms", type=float, default=0.75)
    s.set_defaults(func=cmd_ground)

    s = sub.add_parser("pipeline", help="run the planner/grounder/verifier/answerer loop over annotations")
    s.add_argument("--annotations", required=True)
    s.add_argument("--backend", choices=("mock", "http"), default="mock")
    s.add_argument("--config")
    s.add_argument("--features-dir")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("eval", help="score predictions against annotations")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--metrics", default="riou,miou,miop,gqa,map")
    s.add_argument("--thresholds", type=_floats, default=[0.3, 0.5, 0.7])
    s.add_argument("--cg-thresholds", type=_floats, default=None)
    s.add_argument("--out", help="write the JSON report here")
    s.add_argument("--report-dir", help="write JSON, TSV, text table and figures here")
    s.add_argument("--table", action="store_true", help="print an aligned table instead of JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="compare autodiff gradients with finite differences")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainFailure, ValueError, ArithmeticError, RuntimeError, KeyError, OSError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
