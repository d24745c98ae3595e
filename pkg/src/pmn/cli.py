"""Command-line entry point: ``pmn synth | build | train | eval | cluster | gradcheck | compare``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .checkpoint import load_checkpoint
from .clustering import cluster_prototypes, format_cluster_map, pair_recovery_score
from .config import Config, RunConfig, format_settings, split_list
from .data import (
    DEFAULT_TEST_CHROMOSOMES,
    DEFAULT_VALID_CHROMOSOMES,
    build_windows,
    dataset_stats,
    label_windows,
    one_hot_array,
    split_by_chromosome,
)
from .errors import ConfigError, DatasetFormatError, EncodingError, PMNError, SynthesisError
from .formats import load_split, read_genome, read_label_list, read_peaks, save_split
from .gradcheck import GradCheckSuite, run_suite
from .metrics import compare_reports, format_comparison, read_report, summarize
from .synth import generate, load_synth_spec, planted_group_count, planted_pairs, write_ground_truth
from .trainer import (
    BEST_CHECKPOINT,
    evaluate_model,
    evaluate_single_label_models,
    single_label_checkpoint_paths,
    train_model,
    train_single_label_models,
    write_epoch_log,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EFFECTIVE_CONFIG = "effective_config.txt"


def setup_logging(out_dir: Optional[Path], level: str) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        handlers.insert(0, logging.FileHandler(out_dir / Config.LOG_FILE, encoding="utf-8"))
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, handlers=handlers, force=True)


def _close_file_handlers() -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()


def _echo(out: Path, command: str, settings: dict) -> None:
    (out / f"effective_config_{command}.txt").write_text(format_settings(settings), encoding="utf-8")


def _run_config(args: argparse.Namespace) -> RunConfig:
    defaults = {"threads": Config.threads(), "precision": Config.PRECISION}
    run = RunConfig.from_sources(getattr(args, "config", None), args.set, defaults)
    flags = {"seed": args.seed, "threads": args.threads, "precision": args.precision}
    return run.with_overrides(**{key: value for key, value in flags.items() if value is not None})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_synth_spec(args.spec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    result = generate(spec)
    out = Path(args.out)
    save_split(out, result.split)
    (out / "synth_spec.txt").write_text(spec.to_text(), encoding="utf-8")
    write_ground_truth(out / "ground_truth.tsv", result)
    (out / "stats.tsv").write_text(dataset_stats(result.split).to_text(), encoding="utf-8")
    logger.info(f"Synthetic dataset written to {out}")
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    labels = read_label_list(args.labels)
    peaks = read_peaks(args.peaks, labels)
    genome = read_genome(args.genome)
    windows = build_windows({name: len(seq) for name, seq in genome.items()}, args.window, args.stride)
    records = label_windows(windows, peaks, args.window, args.score_threshold, len(labels), genome)
    for record in records:
        try:
            one_hot_array(record.sequence)
        except EncodingError as e:
            raise DatasetFormatError(
                f"window {record.chrom}:{record.start} has an invalid base at offset {e.position}", path=args.genome
            )
    split = split_by_chromosome(
        records, split_list(args.valid_chroms), split_list(args.test_chroms), label_names=labels
    )
    out = Path(args.out)
    save_split(out, split)
    (out / "stats.tsv").write_text(dataset_stats(split).to_text(), encoding="utf-8")
    (out / "build_config.txt").write_text(
        f"window = {args.window}\nstride = {args.stride}\nscore_threshold = {args.score_threshold!r}\n"
        f"valid_chroms = {args.valid_chroms}\ntest_chroms = {args.test_chroms}\n",
        encoding="utf-8",
    )
    if not records:
        logger.warning("No window overlaps a retained peak; the dataset is empty")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    split = load_split(args.dataset)
    out = Path(args.out)
    (out / EFFECTIVE_CONFIG).write_text(run.echo(), encoding="utf-8")
    cfg = run.train_settings(split.num_labels, split.seq_length, out / "checkpoints")
    if run.variant == "cnn_single":
        results = train_single_label_models(split, cfg)
        for label, result in enumerate(results):
            write_epoch_log(out / f"epoch_log_label_{label}.csv", result.logs)
        logger.info(f"Trained {len(results)} single-label models")
        return EXIT_OK

    result = train_model(split, cfg)
    write_epoch_log(out / "epoch_log.csv", result.logs)
    lines = ["epoch\tvalid_prototype_gap"]
    lines.extend(f"{epoch}\t{gap:.8f}" for epoch, gap in sorted(result.prototype_gaps.items()))
    lines.append(f"# best_epoch = {result.best_epoch}")
    (out / "training_summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Best epoch {result.best_epoch}; checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    split = load_split(args.dataset)
    records = split.part(args.split)
    threads = args.threads or Config.threads()
    source = Path(args.checkpoint)
    _echo(
        Path(args.out),
        f"eval_{args.split}",
        {
            "checkpoint": source,
            "dataset": args.dataset,
            "split": args.split,
            "batch_size": args.batch_size,
            "threads": threads,
            "precision": args.precision,
            "baseline": args.baseline,
            "name": args.name or source.stem,
        },
    )
    if source.is_dir():
        checkpoints = [load_checkpoint(path) for path in single_label_checkpoint_paths(source, split.num_labels)]
        evaluation = evaluate_single_label_models(checkpoints, records, args.batch_size, threads)
    else:
        checkpoint = load_checkpoint(source)
        if args.precision is not None:
            checkpoint.config = checkpoint.config.with_precision(args.precision)
            checkpoint.params = checkpoint.params.astype(args.precision)
        evaluation = evaluate_model(checkpoint, records, args.batch_size, threads)

    baseline = read_report(args.baseline) if args.baseline else None
    train_counts = dataset_stats(split).parts["train"].positive_counts
    report = summarize(
        evaluation.per_label,
        baseline=baseline,
        label_counts=train_counts if split.train else None,
        name=args.name or source.stem,
        label_names=split.label_names,
    )
    path = report.write(Path(args.out) / f"report_{args.split}.tsv")
    for metric, mean in report.means.items():
        logger.info(f"{args.split} mean {metric}: {mean:.4f} (std {report.stds[metric]:.4f})")
    logger.info(f"Report written to {path}")
    return EXIT_OK


def cmd_cluster(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if "prototypes" not in checkpoint.params:
        raise ConfigError(f"variant '{checkpoint.config.variant}' has no prototypes to cluster")
    dendrogram = cluster_prototypes(checkpoint.params["prototypes"])
    out = Path(args.out)
    dendrogram.write(out / "dendrogram.tsv")

    spec = load_synth_spec(args.synth_spec) if args.synth_spec else None
    k = args.k if args.k is not None else planted_group_count(spec) if spec is not None else None
    if k is None:
        raise ConfigError("--k is required unless --synth-spec supplies the planted group count")
    if not 1 <= k <= dendrogram.num_leaves:
        raise ConfigError(f"--k must lie in [1, {dendrogram.num_leaves}], got {k}")
    _echo(out, "cluster", {"checkpoint": args.checkpoint, "k": k, "synth_spec": args.synth_spec})
    cluster_map = dendrogram.cut(k)
    (out / f"clusters_k{k}.tsv").write_text(format_cluster_map(cluster_map), encoding="utf-8")
    if spec is not None:
        score = pair_recovery_score(cluster_map, planted_pairs(spec))
        (out / "pair_recovery.tsv").write_text(
            f"k\tclusters\tplanted_pairs\tpair_recovery\n{k}\t{len(set(cluster_map.values()))}\t"
            f"{len(planted_pairs(spec))}\t{score:.6f}\n",
            encoding="utf-8",
        )
        logger.info(f"Pair recovery at k={k}: {score:.4f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"first_seed={args.seed}")
    suite = GradCheckSuite.from_sources(args.config, overrides)
    if args.out:
        (Path(args.out) / "effective_config_gradcheck.txt").write_text(suite.echo(), encoding="utf-8")
    results = run_suite(suite)
    lines = ["variant\tattention_mode\tseed\telements\tmax_relative_error\tpassed"]
    for r in results:
        lines.append(
            f"{r.variant}\t{r.attention_mode}\t{r.seed}\t{r.report.elements_checked}\t"
            f"{r.report.max_relative_error:.3e}\t{str(r.report.passed).lower()}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        (Path(args.out) / "gradcheck.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    failed = [r for r in results if not r.report.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} gradient checks failed")
        return EXIT_FAILURE
    logger.info(f"All {len(results)} gradient checks passed")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    a = read_report(args.report_a)
    b = read_report(args.report_b)
    text = format_comparison(compare_reports(a, b), a.name, b.name)
    if args.out:
        (Path(args.out) / f"compare_{a.name}_vs_{b.name}.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Run seed")
    common.add_argument("--threads", type=int, default=None, help="Evaluation worker threads")
    common.add_argument("--precision", choices=("f32", "f64"), default=None, help="Floating point precision")
    common.add_argument("--log-level", default=Config.LOG_LEVEL, help="Logging level")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Config override")

    parser = argparse.ArgumentParser(prog="pmn", description="Prototype matching networks for TF binding")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    synth.add_argument("spec", help="Synthetic spec file")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.set_defaults(handler=cmd_synth)

    build = commands.add_parser("build", parents=[common], help="Build a dataset from peaks and a genome")
    build.add_argument("--peaks", required=True, help="Peak file (tf_name chrom start end score)")
    build.add_argument("--labels", required=True, help="Label list file")
    build.add_argument("--genome", required=True, help="FASTA genome file")
    build.add_argument("--out", required=True, help="Output directory")
    build.add_argument("--window", type=int, default=200)
    build.add_argument("--stride", type=int, default=50)
    build.add_argument("--score-threshold", type=float, default=1.0)
    build.add_argument("--valid-chroms", default=",".join(DEFAULT_VALID_CHROMOSOMES))
    build.add_argument("--test-chroms", default=",".join(DEFAULT_TEST_CHROMOSOMES))
    build.set_defaults(handler=cmd_build)

    train = commands.add_parser("train", parents=[common], help="Train a model")
    train.add_argument("dataset", help="Dataset directory")
    train.add_argument("--config", default=None, help="Run config file")
    train.add_argument("--out", required=True, help="Output directory")
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    evaluate.add_argument("checkpoint", help=f"Checkpoint file, or a directory of label_<i>/{BEST_CHECKPOINT}")
    evaluate.add_argument("dataset", help="Dataset directory")
    evaluate.add_argument("--out", required=True, help="Output directory")
    evaluate.add_argument("--split", choices=("train", "valid", "test"), default="test")
    evaluate.add_argument("--baseline", default=None, help="Baseline report for percent increases")
    evaluate.add_argument("--name", default=None, help="Report name")
    evaluate.add_argument("--batch-size", type=int, default=512)
    evaluate.set_defaults(handler=cmd_eval)

    cluster = commands.add_parser("cluster", parents=[common], help="Cluster learned prototypes")
    cluster.add_argument("checkpoint", help="Checkpoint file")
    cluster.add_argument("--k", type=int, default=None, help="Number of clusters in the cut")
    cluster.add_argument("--synth-spec", default=None, help="Synthetic spec with planted co-binding groups")
    cluster.add_argument("--out", required=True, help="Output directory")
    cluster.set_defaults(handler=cmd_cluster)

    gradcheck = commands.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suite")
    gradcheck.add_argument("--config", default=None, help="Grad-check config file")
    gradcheck.add_argument("--out", default=None, help="Output directory")
    gradcheck.set_defaults(handler=cmd_gradcheck)

    compare = commands.add_parser("compare", parents=[common], help="Paired t-tests between two reports")
    compare.add_argument("report_a")
    compare.add_argument("report_b")
    compare.add_argument("--out", default=None, help="Output directory")
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    out_dir = Path(args.out) if getattr(args, "out", None) else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(out_dir, args.log_level)

    try:
        Config.validate()
        logger.info(f"pmn {args.command} started")
        code = args.handler(args)
        logger.info(f"pmn {args.command} finished with exit code {code}")
        return code
    except (ConfigError, DatasetFormatError, SynthesisError, EncodingError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except PMNError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILURE
    finally:
        _close_file_handlers()


def run() -> None:
    sys.exit(main())
