"""Command-line entry point: ``dualstream <subcommand> [flags]``.

Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, write_resolved
from .data import CohortFormatError, GenerationError, generate_pretrain_corpus, generate_synthetic_cohort, load_cohort, save_cohort
from .harness import (
    cross_validate,
    drug_protocol,
    linear_probe,
    pca_features,
    prepare_cohort,
    raw_features,
    train_model,
)
from .harness.benchmark import CORPUS_SEED_OFFSET, run_ablation
from .harness.experiment import TrainingDivergence
from .harness.metrics import MetricsReport
from .harness.probes import CLASSIFIERS, extract_features, fold_feature_probe
from .harness.reports import load_report, render, write_history, write_report
from .interpret import attribute_cohort, write_attribution
from .model import FUSIONS, MODALITIES, CheckpointError, ConfigError, load_checkpoint, save_checkpoint
from .model.network import ParameterMismatchError
from .preprocess import ParcellationError
from .pretrain import EncoderCheckpoint, PretrainDivergence, mae_pretrain

log = logging.getLogger("dualstream")

DOMAIN_ERRORS = (
    ValueError,
    KeyError,
    FileNotFoundError,
    ConfigError,
    CohortFormatError,
    GenerationError,
    CheckpointError,
    ParameterMismatchError,
    ParcellationError,
    PretrainDivergence,
    TrainingDivergence,
)

ENCODER_FILE = "encoder.fmtc"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run config (missing keys take defaults)")
    p.add_argument("--seed", type=int, metavar="U64", help="global seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel folds (1 keeps runs bit-identical)")
    if experiment:
        p.add_argument("--modality", choices=MODALITIES)
        p.add_argument("--pretrained", action="store_true", default=None, help="use the frozen pretrained TS encoder")
        p.add_argument("--fusion", choices=FUSIONS)
        p.add_argument("--folds", type=int, metavar="K")
        p.add_argument("--format", choices=("json", "csv", "md"), default="md")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualstream", description="Dual-stream rs-fMRI drug-response modelling on synthetic cohorts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate and save a synthetic cohort")
    _common(p, experiment=False)
    p.add_argument("--profile", help="generator profile (openneuro-like, inhouse-like, fidelity)")
    p.add_argument("--corpus", type=int, metavar="N", help="also write an N-subject unlabeled pretraining corpus")

    p = sub.add_parser("pretrain", help="masked-autoencoder pretraining of the TS encoder")
    _common(p, experiment=False)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train", help="train one model on all folds but --fold")
    _common(p)
    p.add_argument("--fold", type=int, default=0)

    p = sub.add_parser("cv", help="k-fold cross-validation of one experiment")
    _common(p)

    p = sub.add_parser("drug", help="drug-specific protocol (within- or out-of-domain)")
    _common(p)
    p.add_argument("--train-drug", required=True)
    p.add_argument("--test-drug", required=True)

    p = sub.add_parser("probe", help="ridge / k-NN probes on fixed features")
    _common(p)
    p.add_argument("--classifier", choices=CLASSIFIERS, default="ridge")
    p.add_argument("--features", choices=("fc", "pca", "ts", "learned"), default="learned")

    p = sub.add_parser("interpret", help="integrated gradients over the fused feature")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", help="trained concat model (default: train fold 0)")
    p.add_argument("--steps", type=int, default=50)

    p = sub.add_parser("report", help="render reports; --grid ablation runs missing ablation cells")
    _common(p)
    p.add_argument("--grid", choices=("ablation",))
    p.add_argument("reports", nargs="*", metavar="REPORT", help="report.json files to render")
    parser.subcommands = sub.choices
    return parser


# -- helpers ------------------------------------------------------------------------


def _config(args) -> RunConfig:
    if args.config and not Path(args.config).exists():
        raise FileNotFoundError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    e = cfg.experiment
    for flag, attr in (("modality", "modality"), ("fusion", "fusion"), ("folds", "folds"), ("pretrained", "pretrained")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(e, attr, v)
    if getattr(args, "modality", None) in ("ts", "fc") and getattr(args, "fusion", None) is None:
        e.fusion = "none"
    if getattr(args, "profile", None):
        cfg.generator.profile = args.profile
    cfg.validate()
    return cfg


def _out(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _cohort(cfg: RunConfig):
    d = Path(cfg.paths.data_dir)
    if (d / "manifest.json").exists():
        return load_cohort(d)
    log.info("no cohort under %s; generating %s with seed %d", d, cfg.generator.profile, cfg.seed)
    return generate_synthetic_cohort(cfg.generator.build(), cfg.seed)


def _encoder(cfg: RunConfig) -> EncoderCheckpoint:
    path = Path(cfg.paths.checkpoint_dir) / ENCODER_FILE
    if path.exists():
        enc = EncoderCheckpoint.load(path)
        if enc.config.model_dim != cfg.model.ts.model_dim:
            raise ConfigError(f"{path}: encoder width {enc.config.model_dim} != configured {cfg.model.ts.model_dim}")
        return enc
    enc = _pretrain(cfg)
    enc.save(path)
    return enc


def _pretrain(cfg: RunConfig, epochs: int | None = None) -> EncoderCheckpoint:
    s = cfg.pretrain
    corpus = generate_pretrain_corpus(s.corpus_size, cfg.generator.build(), cfg.seed + CORPUS_SEED_OFFSET)
    return mae_pretrain(corpus, cfg.model.ts, epochs=s.epochs if epochs is None else epochs, seed=cfg.seed,
                        mask_ratio=s.mask_ratio, batch_size=s.batch_size, lr=s.lr, length=cfg.experiment.length)


def _maybe_encoder(cfg: RunConfig):
    return _encoder(cfg) if cfg.experiment.pretrained else None


def _emit(reports: list[MetricsReport], fmt: str) -> None:
    print(render(reports, fmt))


# -- subcommands ------------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.data_dir)
    cohort = generate_synthetic_cohort(cfg.generator.build(), cfg.seed)
    save_cohort(cohort, out)
    extra = {"command": "gen-data", "cohort_fingerprint": cohort.fingerprint, "n_subjects": len(cohort)}
    if args.corpus:
        corpus = generate_pretrain_corpus(args.corpus, cfg.generator.build(), cfg.seed + CORPUS_SEED_OFFSET)
        save_cohort(corpus, out / "pretrain_corpus")
        extra["corpus_fingerprint"] = corpus.fingerprint
    write_resolved(cfg, out, extra)
    labels = cohort.labels
    drugs = {d: cohort.drugs.count(d) for d in sorted(set(cohort.drugs))}
    print(f"wrote {len(cohort)} subjects ({int(labels.sum())} responders; {drugs}) to {out}")


def cmd_pretrain(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.checkpoint_dir)
    enc = _pretrain(cfg, args.epochs)
    path = enc.save(out / ENCODER_FILE)
    write_resolved(cfg, out, {"command": "pretrain", "encoder": enc.provenance})
    print(f"masked MSE {enc.history[0][1]:.4f} -> {enc.history[-1][1]:.4f}; encoder at {path}")


def cmd_train(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.checkpoint_dir)
    cohort = _cohort(cfg)
    res = train_model(cohort, cfg.spec(), args.fold, _maybe_encoder(cfg))
    path = save_checkpoint(res.model, out / f"model_fold{args.fold}.fmtc")
    write_history(res.history, out / f"history_fold{args.fold}.csv")
    write_resolved(cfg, out, {"command": "train", "fold": args.fold, "cohort_fingerprint": cohort.fingerprint})
    print(f"trained {res.stopped_epoch} epochs, final loss {res.history[-1][1]:.4f}; checkpoint at {path}")


def cmd_cv(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.report_dir)
    cohort = _cohort(cfg)
    run = cross_validate(cohort, cfg.spec(), _maybe_encoder(cfg), out, jobs=args.jobs)
    write_resolved(cfg, out, {"command": "cv", "cohort_fingerprint": cohort.fingerprint})
    _emit([run.report], args.format)


def cmd_drug(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.report_dir)
    cohort = _cohort(cfg)
    report = drug_protocol(cohort, args.train_drug, args.test_drug, cfg.spec(), _maybe_encoder(cfg), out)
    write_resolved(cfg, out, {"command": "drug", "train_drug": args.train_drug, "test_drug": args.test_drug,
                              "cohort_fingerprint": cohort.fingerprint})
    _emit([report], args.format)


def cmd_probe(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.report_dir)
    cohort = _cohort(cfg)
    spec = cfg.spec()
    data = prepare_cohort(cohort, spec.length, spec.model.ts.patch_size)
    name = f"probe/{args.classifier}/{args.features}"
    if args.features == "learned":
        run = cross_validate(data, spec, _maybe_encoder(cfg), jobs=args.jobs)
        report = fold_feature_probe([r.model for r in run.results], data, run.split, args.classifier, name)
    else:
        x = raw_features(data, "ts" if args.features == "ts" else "fc")
        if args.features == "pca":
            x = pca_features(x)
        report = linear_probe(x, data.labels, args.classifier, spec.folds, cfg.seed, data.ids, name)
    write_report(report, out, stem=name.replace("/", "_"))
    write_resolved(cfg, out, {"command": "probe", "classifier": args.classifier, "features": args.features})
    _emit([report], args.format)


def cmd_interpret(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.report_dir)
    cohort = _cohort(cfg)
    spec = cfg.spec()
    data = prepare_cohort(cohort, spec.length, spec.model.ts.patch_size)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = train_model(data, spec, 0, _maybe_encoder(cfg)).model
    summary = attribute_cohort(model, extract_features(model, data), data.ids, args.steps)
    path = write_attribution(summary, out)
    write_resolved(cfg, out, {"command": "interpret", "steps": args.steps, "cohort_fingerprint": cohort.fingerprint})
    print(f"ts_share {summary['ts_share']:.6g}, fc_share {summary['fc_share']:.6g}, "
          f"max completeness residual {summary['max_residual']:.3g}; wrote {path}")


def cmd_report(args, cfg: RunConfig) -> None:
    out = _out(args, cfg, cfg.paths.report_dir)
    reports = [load_report(p) for p in args.reports]
    if args.grid == "ablation":
        grid_dir = out / "ablation"
        cells = ["exp5", "exp7", "exp8", "exp9"]
        missing = [c for c in cells if not (grid_dir / c / "report.json").exists()]
        if missing:
            cohort = _cohort(cfg)
            base = cfg.spec()
            encoder = _encoder(cfg) if any(c in ("exp7", "exp9") for c in missing) else None
            run_ablation(cohort, base, encoder, grid_dir, missing, args.jobs)
            write_resolved(cfg, grid_dir, {"command": "report", "grid": "ablation", "cohort_fingerprint": cohort.fingerprint})
        reports += [load_report(grid_dir / c / "report.json") for c in cells]
    if not reports:
        raise UsageError("report: give report files or --grid ablation")
    _emit(reports, args.format)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "cv": cmd_cv,
    "drug": cmd_drug,
    "probe": cmd_probe,
    "interpret": cmd_interpret,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            sub = parser.subcommands[args.command]
            sub.print_help(sys.stderr)
            raise UsageError(f"{sub.prog}: unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
