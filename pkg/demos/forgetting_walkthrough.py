"""Per-source AUC after every episode of a sequential run, for E3, naive
fine-tuning, experience replay and majority voting.

    python demos/forgetting_walkthrough.py [--seed 0] [--full]

Without ``--full`` the corpus is shrunk and three generators arrive, which
finishes in about two minutes; at that scale every method still copes. With
``--full`` (default desk settings, five generators, a few CPU minutes)
fine-tuning visibly loses earlier generators while E3 holds them.
"""
import argparse
import logging

from e3lab.config import validate_config
from e3lab.protocols import run_protocol, train_baseline
from e3lab.synthgen import build_corpus

REDUCED = {
    "corpus.real_counts": {"train": 200, "val": 0, "test": 40},
    "corpus.baseline_counts": {"train": 201, "val": 0, "test": 45},
    "corpus.emerging_counts": {"train": 100, "val": 0, "test": 40},
    "buffer.capacity": 100,
    "budget.n": 50,
    "sequence": ["g_1", "g_2", "g_4"],
    "baseline_train.epochs": 12,
    "ekfn_train.steps": 200,
    "sweep.budgets": [20, 50],
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--full", action="store_true", help="default desk-scale settings")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    raw = {"master_seed": args.seed, "methods": ["e3", "finetune", "er", "majority"]}
    if not args.full:
        raw.update(REDUCED)
    cfg = validate_config(raw)
    corpus = build_corpus(cfg.corpus_config())
    f0 = train_baseline(cfg, corpus)

    for res in run_protocol(cfg, corpus, f0, protocol="sequential"):
        print(f"\n{res.method}")
        sources = list(res.final.per_source_auc)
        print("  episode  " + "  ".join(f"{s:>8}" for s in sources) + "   average  accuracy")
        for ep in res.episodes:
            cells = [f"{ep.per_source_auc[s]:8.3f}" if s in ep.per_source_auc else " " * 8 for s in sources]
            print(f"  {ep.episode:>7}  " + "  ".join(cells) + f"  {ep.average_auc:8.3f}  {ep.average_accuracy:8.3f}")


if __name__ == "__main__":
    main()
