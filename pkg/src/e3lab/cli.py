"""Command-line entry point.

Exit status: 0 on success, 1 for configuration errors, 2 for data, format or
runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RUN_METHODS, load_config
from .detector import DetectorModel
from .e3 import VARIANTS
from .errors import ConfigError, E3LabError
from .protocols import run_protocol, train_baseline
from .report import render_summary, write_report
from .synthgen import build_corpus, export_corpus, load_corpus

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("e3lab")


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", key="budgets") from None


def _corpus(args, cfg):
    if getattr(args, "corpus", None):
        corpus = load_corpus(args.corpus)
        if corpus.master_seed != cfg.master_seed:
            raise ConfigError(f"corpus was generated with seed {corpus.master_seed}, config has {cfg.master_seed}",
                              key="master_seed")
        return corpus
    return build_corpus(cfg.corpus_config())


def _baseline(args) -> Optional[DetectorModel]:
    if getattr(args, "baseline", None):
        model = load_checkpoint(args.baseline)
        if not isinstance(model, DetectorModel):
            raise ConfigError(f"{args.baseline} does not hold a single detector", key="baseline")
        return model
    return None


def _finish(results, cfg, out: Path) -> None:
    write_report(results, out, cfg)
    for res in results:
        if res.state is not None:
            save_checkpoint(res.state.checkpointable(), out / "checkpoints" / res.label.replace("=", "-"))
    for res in results:
        print(f"{res.label:<18} final average AUC {res.final.average_auc:.4f}  "
              f"accuracy {res.final.average_accuracy:.4f}")


def cmd_gen_corpus(args) -> None:
    cfg = load_config(args.config)
    corpus = build_corpus(cfg.corpus_config())
    path = export_corpus(corpus, args.out)
    print(f"wrote corpus {corpus.checksum()[:12]} to {path}")


def cmd_train_baseline(args) -> None:
    cfg = load_config(args.config)
    model = train_baseline(cfg, _corpus(args, cfg))
    save_checkpoint(model, args.out)
    print(f"wrote baseline detector ({model.num_parameters()} parameters) to {args.out}")


def cmd_run(args) -> None:
    overrides = {}
    if args.protocol:
        overrides["protocol"] = args.protocol
    if args.methods:
        overrides["methods"] = _csv_list(args.methods)
    cfg = load_config(args.config).with_overrides(**overrides)
    results = run_protocol(cfg, _corpus(args, cfg), _baseline(args))
    _finish(results, cfg, Path(args.out))


def cmd_sweep(args) -> None:
    cfg = load_config(args.config)
    overrides = {"protocol": "sweep"}
    if args.budgets:
        overrides["sweep.budgets"] = _int_list(args.budgets)
    if args.methods:
        overrides["methods"] = _csv_list(args.methods)
    else:
        overrides["methods"] = ["e3"]
    cfg = cfg.with_overrides(**overrides)
    results = run_protocol(cfg, _corpus(args, cfg), _baseline(args))
    _finish(results, cfg, Path(args.out))


def cmd_ablate(args) -> None:
    overrides = {"protocol": "sequential", "methods": ["e3"], "ekfn.variant": args.variant}
    if args.layers is not None:
        overrides["ekfn.n_layers"] = args.layers
    cfg = load_config(args.config).with_overrides(**overrides)
    results = run_protocol(cfg, _corpus(args, cfg), _baseline(args))
    for res in results:
        res.setting = f"{args.variant},L={cfg['ekfn.n_layers']}"
    _finish(results, cfg, Path(args.out))


def cmd_report(args) -> None:
    sys.stdout.write(render_summary(args.input, args.format))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="e3lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate and export the synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-baseline", help="train the baseline detector")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", help="exported corpus directory (default: regenerate from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_baseline)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True)
    common.add_argument("--corpus", help="exported corpus directory")
    common.add_argument("--baseline", help="baseline detector checkpoint (default: train one)")
    common.add_argument("--out", required=True)

    p = sub.add_parser("run", parents=[common], help="run the single or sequential protocol")
    p.add_argument("--protocol", choices=["single", "sequential"])
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(RUN_METHODS)}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="sequential protocol over several budgets N")
    p.add_argument("--budgets", help="comma-separated N values, e.g. 20,50,100,200")
    p.add_argument("--methods", help="methods to sweep (default e3)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", parents=[common], help="sequential E3 with a fusion-network variant")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.add_argument("--layers", type=int, help="transformer layers in the fusion network")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="print per-episode averages from a run directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["csv", "text"], default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (E3LabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
