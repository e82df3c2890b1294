"""Command line pipeline: ingest, weaklabel, train, detect, evaluate, report.

Every option can come from a JSON config file (``--config run.json``, keys
named like the long flags with underscores); explicit flags win over the
file.  Each output artifact starts with a header line carrying the resolved
run configuration and its hash, so results stay traceable to settings.

Exit codes: 0 success, 1 usage, 2 bad data or configuration, 3 scorer
transport failure.  ``SENT2SPAN_SCORER`` in the environment forces an
external scorer endpoint for ``detect``, overriding flags and config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path
from typing import Any, Sequence

from sent2span.corpus import Corpus, PicoType, Span, load_corpus, save_corpus
from sent2span.errors import (
    ConfigurationError,
    CorpusError,
    ScorerTransportError,
    Sent2SpanError,
    TrainingError,
)
from sent2span.evaluation import (
    ErrorCounts,
    EvaluationReport,
    ReductionStats,
    SentenceMetrics,
    TokenMetrics,
    evaluate_detections,
    render_report,
)
from sent2span.inference import DetectionResult, GateMode, detect_spans_full
from sent2span.protocol import ExternalScorerClient
from sent2span.scorer import BaselineScorerModel, TrainConfig, train_baseline
from sent2span.span_engine import DEFAULT_MAX_SPAN_LEN, SpanConfig
from sent2span.weak_labels import LabelMode, label_corpus

SCORER_ENV_VAR = "SENT2SPAN_SCORER"

_PICO_CHOICES = [p.value for p in PicoType]


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings of one subcommand invocation."""

    command: str
    options: dict[str, Any]

    def canonical(self) -> str:
        return json.dumps(
            {"command": self.command, "options": self.options},
            sort_keys=True,
            separators=(",", ":"),
        )

    @property
    def config_hash(self) -> str:
        return sha256(self.canonical().encode("utf-8")).hexdigest()

    def header(self, **extra: Any) -> dict[str, Any]:
        out = {
            "command": self.command,
            "config": self.options,
            "config_hash": self.config_hash,
        }
        out.update(extra)
        return out


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this pipeline reserves 2 for
    # data problems, so remap.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return raw


def _resolve(args: argparse.Namespace, defaults: dict[str, Any]) -> dict[str, Any]:
    """Merge CLI flags over config-file values over built-in defaults."""
    config = _load_config_file(getattr(args, "config", None))
    unknown = set(config) - set(defaults)
    if unknown:
        raise ConfigurationError(
            f"unknown config keys: {', '.join(sorted(unknown))}"
        )
    resolved: dict[str, Any] = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in config:
            resolved[key] = config[key]
        else:
            resolved[key] = default
    return resolved


def _require(resolved: dict[str, Any], keys: Sequence[str], command: str) -> None:
    missing = [k for k in keys if resolved[k] is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise _UsageError(f"{command}: missing required option(s): {flags}")


class _UsageError(Sent2SpanError):
    pass


def _span_config(resolved: dict[str, Any], pico: PicoType) -> SpanConfig:
    caps = dict(DEFAULT_MAX_SPAN_LEN)
    if resolved["max_span_len"] is not None:
        caps[pico] = int(resolved["max_span_len"])
    return SpanConfig(
        max_span_len=caps,
        top_k=int(resolved["top_k"]),
        score_mode=resolved["score_mode"],
        batch_size=int(resolved["batch_size"]),
        eliminate=not resolved["no_eliminate"],
    )


def _write_jsonl(path: str, lines: list[dict[str, Any]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for obj in lines:
            fh.write(_dumps(obj))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

_INGEST_DEFAULTS: dict[str, Any] = {"input": None, "output": None}


def _cmd_ingest(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _INGEST_DEFAULTS)
    _require(resolved, ["input", "output"], "ingest")
    corpus = load_corpus(resolved["input"])
    save_corpus(corpus, resolved["output"])
    print(f"ingested {len(corpus)} sentences into {resolved['output']}")
    return 0


_WEAKLABEL_DEFAULTS: dict[str, Any] = {
    "corpus": None,
    "pico": None,
    "mode": "minor",
    "output": None,
}


def _cmd_weaklabel(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _WEAKLABEL_DEFAULTS)
    _require(resolved, ["corpus", "pico", "output"], "weaklabel")
    pico = PicoType(resolved["pico"])
    mode = LabelMode(resolved["mode"])
    corpus = load_corpus(resolved["corpus"])
    run = RunConfig("weaklabel", resolved)
    lines: list[dict[str, Any]] = [run.header()]
    n_positive = 0
    for sentence, label in label_corpus(corpus, pico, mode):
        n_positive += int(label)
        lines.append(
            {
                "doc_id": sentence.doc_id,
                "sent_index": sentence.sent_index,
                "pico": pico.value,
                "mode": mode.value,
                "label": label,
            }
        )
    _write_jsonl(resolved["output"], lines)
    print(
        f"labeled {len(corpus)} sentences ({n_positive} positive, mode={mode.value})"
    )
    return 0


_TRAIN_DEFAULTS: dict[str, Any] = {
    "corpus": None,
    "dev": None,
    "pico": None,
    "mode": "minor",
    "output": None,
    "epochs": 20,
    "learning_rate": 0.5,
    "l2": 1e-6,
    "seed": 0,
    "feature_dim": 2**18,
    "batch_size": 32,
}


def _cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _TRAIN_DEFAULTS)
    _require(resolved, ["corpus", "pico", "output"], "train")
    pico = PicoType(resolved["pico"])
    mode = LabelMode(resolved["mode"])
    corpus = load_corpus(resolved["corpus"])
    labeled = label_corpus(corpus, pico, mode)
    sentences = [s.token_texts for s, _ in labeled]
    labels = [v for _, v in labeled]
    dev_sentences = dev_labels = None
    if resolved["dev"] is not None:
        dev_labeled = label_corpus(load_corpus(resolved["dev"]), pico, mode)
        dev_sentences = [s.token_texts for s, _ in dev_labeled]
        dev_labels = [v for _, v in dev_labeled]
    config = TrainConfig(
        epochs=int(resolved["epochs"]),
        learning_rate=float(resolved["learning_rate"]),
        l2=float(resolved["l2"]),
        seed=int(resolved["seed"]),
        feature_dim=int(resolved["feature_dim"]),
        batch_size=int(resolved["batch_size"]),
    )
    model = train_baseline(
        sentences, labels, pico, config,
        dev_sentences=dev_sentences, dev_labels=dev_labels,
    )
    model.save(resolved["output"])
    print(
        f"trained baseline on {len(sentences)} sentences "
        f"(mode={mode.value}, epochs={config.epochs}) -> {resolved['output']}"
    )
    return 0


_DETECT_DEFAULTS: dict[str, Any] = {
    "corpus": None,
    "pico": None,
    "model": None,
    "endpoint": None,
    "gate": "predicted",
    "top_k": 2,
    "max_span_len": None,
    "score_mode": "logit",
    "batch_size": 64,
    "no_eliminate": False,
    "output": None,
    "dump": None,
}


def _cmd_detect(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _DETECT_DEFAULTS)
    env_endpoint = os.environ.get(SCORER_ENV_VAR)
    if env_endpoint:
        resolved["endpoint"] = env_endpoint
        resolved["model"] = None
    _require(resolved, ["corpus", "pico", "output"], "detect")
    if resolved["model"] is None and resolved["endpoint"] is None:
        raise _UsageError("detect: need --model or --endpoint (or SENT2SPAN_SCORER)")
    pico = PicoType(resolved["pico"])
    gate = GateMode(resolved["gate"])
    span_config = _span_config(resolved, pico)
    corpus = load_corpus(resolved["corpus"])
    run = RunConfig("detect", resolved)

    if resolved["endpoint"] is not None:
        scorer = ExternalScorerClient(resolved["endpoint"], pico)
    else:
        scorer = BaselineScorerModel.load(resolved["model"])
        if scorer.pico is not pico:
            raise ConfigurationError(
                f"model at {resolved['model']} was trained for "
                f"{scorer.pico.value}, not {pico.value}"
            )

    records: list[dict[str, Any]] = []
    dump_records: list[dict[str, Any]] = []
    eliminated = total = 0
    try:
        for sentence in corpus:
            result, scored, elim, base = detect_spans_full(
                sentence, scorer, pico, span_config, gate
            )
            records.append(
                {
                    "doc_id": result.doc_id,
                    "sent_index": result.sent_index,
                    "pico": pico.value,
                    "gate": gate.value,
                    "sentence_positive": result.sentence_positive,
                    "spans": [[s.start, s.end] for s in result.selected],
                }
            )
            if elim is not None:
                eliminated += len(elim.eliminated)
                total += elim.total_candidates
                if resolved["dump"] is not None:
                    dump_records.append(
                        {
                            "doc_id": result.doc_id,
                            "sent_index": result.sent_index,
                            "pico": pico.value,
                            "n_tokens": elim.n_tokens,
                            "max_len": elim.max_len,
                            "total_candidates": elim.total_candidates,
                            "eliminated": len(elim.eliminated),
                            "base_pos_score": base.positive_score,
                            "base_probability": base.probability,
                            "scored": [
                                [ss.span.start, ss.span.end, ss.contribution]
                                for ss in scored
                            ],
                        }
                    )
    finally:
        if isinstance(scorer, ExternalScorerClient):
            scorer.close()

    summary = {
        "summary": {
            "n_sentences": len(records),
            "reduction": {"eliminated": eliminated, "total_candidates": total},
        }
    }
    _write_jsonl(resolved["output"], [run.header()] + records + [summary])
    if resolved["dump"] is not None:
        _write_jsonl(resolved["dump"], [run.header()] + dump_records)
    n_gated = sum(1 for r in records if r["sentence_positive"])
    print(
        f"detected spans in {n_gated} of {len(records)} sentences -> "
        f"{resolved['output']}"
    )
    return 0


def _read_predictions(path: str) -> tuple[dict, list[DetectionResult], ReductionStats | None]:
    header: dict = {}
    reduction = None
    detections: list[DetectionResult] = []
    try:
        fh = Path(path).open("r", encoding="utf-8")
    except FileNotFoundError:
        raise CorpusError(f"predictions file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: not valid JSON: {exc}") from None
            if "config" in obj and lineno == 1:
                header = obj
                continue
            if "summary" in obj:
                raw = obj["summary"].get("reduction")
                if raw:
                    reduction = ReductionStats(
                        eliminated=int(raw["eliminated"]),
                        total_candidates=int(raw["total_candidates"]),
                    )
                continue
            try:
                detections.append(
                    DetectionResult(
                        doc_id=obj["doc_id"],
                        sent_index=int(obj["sent_index"]),
                        pico=PicoType(obj["pico"]),
                        sentence_positive=bool(obj["sentence_positive"]),
                        gate=GateMode(obj["gate"]),
                        selected=tuple(Span(s, e) for s, e in obj["spans"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad prediction record: {exc}") from None
    return header, detections, reduction


_EVALUATE_DEFAULTS: dict[str, Any] = {
    "corpus": None,
    "predictions": None,
    "pico": None,
    "output": None,
}


def _cmd_evaluate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _EVALUATE_DEFAULTS)
    _require(resolved, ["corpus", "predictions", "pico", "output"], "evaluate")
    pico = PicoType(resolved["pico"])
    corpus = load_corpus(resolved["corpus"])
    pred_header, detections, reduction = _read_predictions(resolved["predictions"])
    report = evaluate_detections(corpus, detections, pico, reduction)
    run = RunConfig("evaluate", resolved)
    payload = run.header(
        detect_config=pred_header.get("config"),
        report=_report_json(report),
    )
    Path(resolved["output"]).write_text(_dumps(payload) + "\n", encoding="utf-8")
    print(render_report(report))
    return 0


def _report_json(report: EvaluationReport) -> dict[str, Any]:
    out: dict[str, Any] = {
        "pico": report.pico.value,
        "n_sentences": report.n_sentences,
        "token": {
            "tp": report.token.tp,
            "fp": report.token.fp,
            "fn": report.token.fn,
            "precision": report.token.precision,
            "recall": report.token.recall,
            "f1": report.token.f1,
        },
        "sentence": {
            "tp": report.sentence.tp,
            "fp": report.sentence.fp,
            "fn": report.sentence.fn,
            "tn": report.sentence.tn,
            "accuracy": report.sentence.accuracy,
            "precision": report.sentence.precision,
            "recall": report.sentence.recall,
            "f1": report.sentence.f1,
        },
        "errors": {
            "exact": report.errors.exact,
            "boundary": report.errors.boundary,
            "overlap": report.errors.overlap,
            "false_positive": report.errors.false_positive,
            "false_negative": report.errors.false_negative,
        },
        "reduction": None,
    }
    if report.reduction is not None:
        out["reduction"] = {
            "eliminated": report.reduction.eliminated,
            "total_candidates": report.reduction.total_candidates,
            "ratio": report.reduction.ratio,
        }
    return out


def _report_from_json(raw: dict[str, Any]) -> EvaluationReport:
    reduction = None
    if raw.get("reduction"):
        reduction = ReductionStats(
            eliminated=raw["reduction"]["eliminated"],
            total_candidates=raw["reduction"]["total_candidates"],
        )
    return EvaluationReport(
        pico=PicoType(raw["pico"]),
        token=TokenMetrics(**raw["token"]),
        sentence=SentenceMetrics(**raw["sentence"]),
        errors=ErrorCounts(**raw["errors"]),
        reduction=reduction,
        n_sentences=raw["n_sentences"],
    )


_REPORT_DEFAULTS: dict[str, Any] = {"input": None}


def _cmd_report(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _REPORT_DEFAULTS)
    _require(resolved, ["input"], "report")
    try:
        raw = json.loads(Path(resolved["input"]).read_text(encoding="utf-8"))
        print(render_report(_report_from_json(raw["report"])))
    except FileNotFoundError:
        raise CorpusError(f"report file not found: {resolved['input']}") from None
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorpusError(f"bad report file {resolved['input']}: {exc}") from None
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sent2span", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def add(name: str, func, help_text: str) -> _Parser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file with option defaults")
        return p

    p = add("ingest", _cmd_ingest, "validate and canonicalize a corpus file")
    p.add_argument("--input")
    p.add_argument("--output")

    p = add("weaklabel", _cmd_weaklabel, "derive sentence labels from crowd spans")
    p.add_argument("--corpus")
    p.add_argument("--pico", choices=_PICO_CHOICES)
    p.add_argument("--mode", choices=[m.value for m in LabelMode])
    p.add_argument("--output")

    p = add("train", _cmd_train, "fit the baseline sentence scorer")
    p.add_argument("--corpus")
    p.add_argument("--dev")
    p.add_argument("--pico", choices=_PICO_CHOICES)
    p.add_argument("--mode", choices=[m.value for m in LabelMode])
    p.add_argument("--output")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--l2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--batch-size", type=int, dest="batch_size")

    p = add("detect", _cmd_detect, "mask-score candidates and select spans")
    p.add_argument("--corpus")
    p.add_argument("--pico", choices=_PICO_CHOICES)
    p.add_argument("--model")
    p.add_argument("--endpoint")
    p.add_argument("--gate", choices=[g.value for g in GateMode])
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--max-span-len", type=int, dest="max_span_len")
    p.add_argument("--score-mode", choices=["logit", "probability"], dest="score_mode")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument(
        "--no-eliminate", action="store_const", const=True, dest="no_eliminate"
    )
    p.add_argument("--output")
    p.add_argument("--dump")

    p = add("evaluate", _cmd_evaluate, "score predictions against expert spans")
    p.add_argument("--corpus")
    p.add_argument("--predictions")
    p.add_argument("--pico", choices=_PICO_CHOICES)
    p.add_argument("--output")

    p = add("report", _cmd_report, "pretty-print a saved evaluation report")
    p.add_argument("--input")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"sent2span: error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, ConfigurationError, TrainingError) as exc:
        print(f"sent2span: error: {exc}", file=sys.stderr)
        return 2
    except ScorerTransportError as exc:
        print(f"sent2span: scorer error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"sent2span: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
