"""Run the synthetic-data experiments for PMN against the CNN baseline.

Checks, per seed:
    learning     PMN mean test auROC on unconditional TFs reaches the target
    advantage    PMN beats the multi-label CNN on conditionally bound TFs
    proto_loss   validation prototype gap is lower with the prototype loss than without
    clustering   prototype clusters recover the planted co-binding pairs
    convergence  PMN validation auROC at epoch 5 is at least the CNN's

Usage:
    python scripts/synthetic_experiments.py [--quick] [--seeds 0 1 2] [--out runs/]
"""

import argparse
import logging
import sys
import tempfile
from pathlib import Path
from typing import Dict, List

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pmn.clustering import cluster_prototypes, pair_recovery_score  # noqa: E402
from pmn.model import PMNConfig  # noqa: E402
from pmn.synth import SynthSpec, generate, planted_group_count, planted_pairs  # noqa: E402
from pmn.trainer import TrainConfig, TrainResult, evaluate_model, train_model  # noqa: E402

logger = logging.getLogger("synthetic_experiments")

LEARNING_TARGET = 0.95
ADVANTAGE_TARGET = 0.02
RECOVERY_TARGET = 0.8
CONVERGENCE_EPOCH = 5


def learning_spec(seed: int, scale: float) -> SynthSpec:
    return SynthSpec(
        num_labels=8,
        seq_length=200,
        motif_length=8,
        groups=[{"members": (0, 1), "probability": 0.3}],
        train_count=int(10000 * scale),
        valid_count=int(1000 * scale),
        test_count=int(2000 * scale),
        seed=seed,
    )


def cobinding_spec(seed: int, scale: float) -> SynthSpec:
    return SynthSpec(
        num_labels=8,
        seq_length=200,
        motif_length=8,
        groups=[{"members": (0, 1), "probability": 0.3}, {"members": (2, 3), "probability": 0.3}],
        conditionals=[
            {"dependent": 6, "anchor": 4, "probability": 0.5},
            {"dependent": 7, "anchor": 5, "probability": 0.5},
        ],
        distractor_rate=0.3,
        train_count=int(10000 * scale),
        valid_count=int(1000 * scale),
        test_count=int(2000 * scale),
        seed=seed,
    )


def model_config(spec: SynthSpec, variant: str, prototype_weight: float, dim: int) -> PMNConfig:
    return PMNConfig(
        num_labels=spec.num_labels,
        seq_length=spec.seq_length,
        embedding_dim=dim,
        hops=5,
        conv_channels=(dim, dim, dim),
        conv_widths=(9, 5, 3),
        variant=variant,
        prototype_weight=prototype_weight,
    )


def train(split, model: PMNConfig, args, seed: int, out: Path) -> TrainResult:
    cfg = TrainConfig(
        model=model,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=seed,
        checkpoint_dir=str(out),
        record_timing=False,
        threads=args.threads,
    )
    return train_model(split, cfg)


def valid_auroc_at(result: TrainResult, epoch: int) -> float:
    for log in result.logs:
        if log.split == "valid" and log.epoch == epoch:
            return log.mean_auroc
    return float("nan")


def run_seed(seed: int, args, root: Path) -> Dict[str, float]:
    """Train every model one seed needs and measure each experiment."""
    measures: Dict[str, float] = {}

    spec = learning_spec(seed, args.scale)
    split = generate(spec).split
    unconditional = [tf for tf in range(spec.num_labels) if tf not in spec.dependents]
    result = train(split, model_config(spec, "pmn", 1.0, args.dim), args, seed, root / f"learning_{seed}")
    test = evaluate_model(result.checkpoint, split.test, threads=args.threads)
    measures["learning"] = float(np.nanmean(test.per_label["auroc"][unconditional]))

    spec = cobinding_spec(seed, args.scale)
    split = generate(spec).split
    dependents = sorted(spec.dependents)
    pmn = train(split, model_config(spec, "pmn", 1.0, args.dim), args, seed, root / f"pmn_{seed}")
    pmn_free = train(split, model_config(spec, "pmn", 0.0, args.dim), args, seed, root / f"pmn_l0_{seed}")
    cnn = train(split, model_config(spec, "cnn_multi", 1.0, args.dim), args, seed, root / f"cnn_{seed}")

    pmn_test = evaluate_model(pmn.checkpoint, split.test, threads=args.threads)
    cnn_test = evaluate_model(cnn.checkpoint, split.test, threads=args.threads)
    measures["advantage"] = float(
        np.nanmean(pmn_test.per_label["auroc"][dependents]) - np.nanmean(cnn_test.per_label["auroc"][dependents])
    )

    last = args.epochs
    measures["proto_loss"] = pmn_free.prototype_gaps.get(last, np.nan) - pmn.prototype_gaps.get(last, np.nan)

    cluster_map = cluster_prototypes(pmn.checkpoint.params["prototypes"]).cut(planted_group_count(spec))
    measures["clustering"] = pair_recovery_score(cluster_map, planted_pairs(spec))

    measures["convergence"] = valid_auroc_at(pmn, CONVERGENCE_EPOCH) - valid_auroc_at(cnn, CONVERGENCE_EPOCH)
    return measures


def verdicts(per_seed: List[Dict[str, float]]) -> Dict[str, bool]:
    def majority(name, test):
        return sum(test(m[name]) for m in per_seed) * 2 > len(per_seed)

    return {
        "learning": all(m["learning"] >= LEARNING_TARGET for m in per_seed),
        "advantage": float(np.mean([m["advantage"] for m in per_seed])) >= ADVANTAGE_TARGET,
        "proto_loss": majority("proto_loss", lambda v: v > 0),
        "clustering": majority("clustering", lambda v: v >= RECOVERY_TARGET),
        "convergence": majority("convergence", lambda v: v >= 0),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--quick", action="store_true", help="Tenth-size datasets and a smaller model")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--learning-rate", type=float, default=3e-3)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default=None, help="Keep checkpoints here (temporary directory otherwise)")
    args = parser.parse_args()
    args.scale = 0.1 if args.quick else 1.0
    args.dim = 16 if args.quick else 64
    if args.epochs < CONVERGENCE_EPOCH:
        parser.error(f"--epochs must be at least {CONVERGENCE_EPOCH}")

    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    with tempfile.TemporaryDirectory() as scratch:
        root = Path(args.out) if args.out else Path(scratch)
        per_seed = []
        for seed in args.seeds:
            logger.info(f"Seed {seed}")
            per_seed.append(run_seed(seed, args, root))

    names = ["learning", "advantage", "proto_loss", "clustering", "convergence"]
    print("=" * 80)
    print("Synthetic experiments")
    print("=" * 80)
    print("seed\t" + "\t".join(names))
    for seed, measures in zip(args.seeds, per_seed):
        print(f"{seed}\t" + "\t".join(f"{measures[name]:.4f}" for name in names))
    print("-" * 80)
    results = verdicts(per_seed)
    for name in names:
        print(f"{'✅' if results[name] else '❌'} {name}")
    return 0 if all(results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
