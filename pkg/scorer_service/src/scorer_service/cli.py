"""Command line for the scorer service: init-base, train, serve.

Exit codes follow the engine pipeline's convention: 0 success, 1 usage,
2 bad data, model, or configuration.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

import numpy as np

from scorer_service.data import load_training_set, vocabulary
from scorer_service.errors import ServiceError
from scorer_service.model import FineTuneConfig, build_tiny_base, fine_tune
from scorer_service.service import serve

_PICO_CHOICES = ["population", "intervention", "outcome"]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _cmd_init_base(args: argparse.Namespace) -> int:
    words = vocabulary(args.corpus)
    path = build_tiny_base(
        words,
        args.output,
        hidden_size=args.hidden,
        num_layers=args.layers,
        num_heads=args.heads,
        seed=args.seed,
    )
    print(f"wrote untrained base with {len(words)} word vocabulary to {path}")
    return 0


def _split_dev(sentences, labels, fraction: float, seed: int):
    if not 0.0 <= fraction < 1.0:
        raise ValueError("dev fraction must be in [0, 1)")
    n_dev = int(len(sentences) * fraction)
    if n_dev == 0:
        return sentences, labels, None, None
    order = np.random.default_rng(seed).permutation(len(sentences))
    dev_index = set(order[:n_dev].tolist())
    train_x = [sentences[i] for i in range(len(sentences)) if i not in dev_index]
    train_y = [labels[i] for i in range(len(sentences)) if i not in dev_index]
    dev_x = [sentences[i] for i in sorted(dev_index)]
    dev_y = [labels[i] for i in sorted(dev_index)]
    return train_x, train_y, dev_x, dev_y


def _cmd_train(args: argparse.Namespace) -> int:
    sentences, labels = load_training_set(args.corpus, args.labels, args.pico)
    config = FineTuneConfig(
        base_model=args.base,
        pico=args.pico,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        train_batch_size=args.train_batch,
        eval_batch_size=args.eval_batch,
        max_seq_len=args.max_seq,
        seed=args.seed,
    )
    train_x, train_y, dev_x, dev_y = _split_dev(
        sentences, labels, args.dev_fraction, config.seed
    )
    result = fine_tune(
        train_x, train_y, config, args.output,
        dev_sentences=dev_x, dev_labels=dev_y,
    )
    for entry in result.history:
        dev_part = (
            f"  dev_f1 {entry['dev_f1']:.4f}" if entry["dev_f1"] is not None else ""
        )
        print(f"epoch {entry['epoch']}: loss {entry['train_loss']:.4f}{dev_part}")
    print(f"saved epoch {result.best_epoch} checkpoint to {result.checkpoint_dir}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    service = serve(args.checkpoint, host=args.host, port=args.port)
    print(f"scoring on {service.endpoint}", flush=True)
    try:
        service.run_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sent2span-scorer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-base", help="write a small untrained base model")
    p.set_defaults(func=_cmd_init_base)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="fine-tune a base model on weak labels")
    p.set_defaults(func=_cmd_train)
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--pico", required=True, choices=_PICO_CHOICES)
    p.add_argument("--base", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=2e-5, dest="learning_rate")
    p.add_argument("--train-batch", type=int, default=32, dest="train_batch")
    p.add_argument("--eval-batch", type=int, default=64, dest="eval_batch")
    p.add_argument("--max-seq", type=int, default=512, dest="max_seq")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dev-fraction", type=float, default=0.2, dest="dev_fraction")

    p = sub.add_parser("serve", help="answer scoring requests for a checkpoint")
    p.set_defaults(func=_cmd_serve)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ServiceError, ValueError) as exc:
        print(f"sent2span-scorer: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"sent2span-scorer: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
