"""Command-line entry point: ``jman {synth,train,eval,ablate,trace}``.

Exit codes: 0 success, 2 usage or data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import checkpoint
from .core import export_trace, parse_features
from .data import SynthConfig, build_vocab, load_dataset, load_split, prepare_turn, write_synth
from .errors import JmanError, NumericError
from .model import JMAN
from .train import accuracy, evaluate, infer_input_dims, make_run_config, train

log = logging.getLogger("jman")

TABLE_ROWS = [
    ("dh", 1), ("dh,c", 1), ("dh,s", 1), ("dh,rgb", 1), ("dh,flow", 1), ("dh,aud", 1),
    ("dh,c,s", 1), ("dh,rgb,flow", 1), ("dh,c,s,rgb,flow", 1), ("dh,c,s,rgb,flow,aud", 1),
    ("dh,c,s,rgb,flow", 2), ("dh,c,s,rgb,flow", 3), ("dh,c,s,rgb,flow", 4), ("dh,c,s,rgb,flow", 5),
]


class CliError(JmanError):
    pass


def _file_streams(features) -> list[str]:
    return [s for s in ("rgb", "flow", "aud") if s in features]


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}") from None


def _train_one(args, features: str, steps: Optional[int], data_dir: str, split: str, out: Optional[str], log_path: Optional[str]):
    overrides = _load_config_file(getattr(args, "config", None))
    preset = overrides.pop("preset", None) or args.preset
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    feats = parse_features(features) if features else None
    file_streams = _file_streams(feats if feats else ("rgb", "flow", "aud"))
    turns = load_split(data_dir, split, file_streams)
    dialogs = load_dataset(os.path.join(data_dir, f"{split}.jsonl"))
    vocab = build_vocab(dialogs)
    prepared = [prepare_turn(t, vocab) for t in turns]
    run = make_run_config(preset, overrides, features=feats, steps=steps, seed=args.seed, **infer_input_dims(prepared))
    model = JMAN(run.model, len(vocab))
    result = train(model, prepared, run, vocab=vocab, log_path=log_path, ckpt_path=out)
    return model, vocab, run, result


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_events=args.events, segments=args.segments, frames_per_segment=args.frames, noise=args.noise,
        turns=args.turns, two_hop_prob=args.two_hop, seed=args.seed,
        sizes={"train": args.train, "valid": args.valid, "test": args.test},
    )
    write_synth(args.out, cfg)
    print(f"wrote synthetic dataset to {args.out}")
    return 0


def cmd_train(args) -> int:
    log_path = args.log or os.path.splitext(args.out)[0] + ".loss.csv"
    _, _, _, result = _train_one(args, args.features, args.steps, args.data, args.split, args.out, log_path)
    print(f"trained {len(result.losses)} epochs, final loss {result.losses[-1] if result.losses else float('nan'):.6f}")
    return 0


def _prepared_split(model, vocab, data_dir: str, split: str):
    turns = load_split(data_dir, split, _file_streams(model.config.features))
    return [prepare_turn(t, vocab) for t in turns]


def cmd_eval(args) -> int:
    model, vocab, _ = checkpoint.load(args.ckpt)
    prepared = _prepared_split(model, vocab, args.data, args.split)
    report, rows = evaluate(model, prepared, vocab, args.mode, args.beam)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.splitext(args.out)[0] + ".hyps.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    b = report["bleu"]
    print(f"BLEU-1..4 {b[0]:.3f} {b[1]:.3f} {b[2]:.3f} {b[3]:.3f}  ROUGE-L {report['rouge_l']:.3f}  "
          f"CIDEr {report['cider']:.3f}  exact {report['exact_match']:.3f}")
    return 0


def read_matrix(path: Optional[str]) -> list[tuple[str, int]]:
    """Rows of ``<features> <steps>``; blank lines and ``#`` comments are skipped."""
    if not path:
        return list(TABLE_ROWS)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                feats = ",".join(parse_features(parts[0]))
                steps = int(parts[1]) if len(parts) > 1 else 1
            except (ValueError, IndexError) as e:
                raise CliError(f"{path}:{lineno}: bad matrix row ({e})") from None
            rows.append((feats, steps))
    return rows


def config_label(features: str, steps: int) -> str:
    names = {"dh": "DH", "c": "C", "s": "S", "rgb": "rgb", "flow": "flow", "aud": "aud"}
    label = ", ".join(names[f] for f in parse_features(features))
    return f"JMAN ({label})" if steps == 1 else f"JMAN ({label}, n = {steps})"


def cmd_ablate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rows = read_matrix(args.matrix)
    table = []
    for i, (feats, steps) in enumerate(rows):
        tag = f"row{i:02d}"
        model, vocab, _, _ = _train_one(args, feats, steps, args.data, args.train_split,
                                        os.path.join(args.out, f"{tag}.jmck"), os.path.join(args.out, f"{tag}.loss.csv"))
        prepared = _prepared_split(model, vocab, args.data, args.split)
        report, hyp_rows = evaluate(model, prepared, vocab)
        with open(os.path.join(args.out, f"{tag}.report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")
        table.append([config_label(feats, steps), *report["bleu"], report["rouge_l"], report["cider"],
                      report["exact_match"], accuracy(hyp_rows, hop=2)])
        print(f"{table[-1][0]}: exact {report['exact_match']:.3f}")
    with open(os.path.join(args.out, "ablation.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider", "exact_match", "two_hop_exact"])
        for r in table:
            w.writerow([r[0]] + [f"{v:.6f}" for v in r[1:]])
    return 0


def cmd_trace(args) -> int:
    model, vocab, _ = checkpoint.load(args.ckpt)
    prepared = _prepared_split(model, vocab, args.data, args.split)
    match = [p for p in prepared if p.key == args.example or p.turn.video_id == args.example]
    if not match:
        raise CliError(f"example {args.example!r} not found in split {args.split!r}")
    p = match[0]
    hyp, trace = model.generate(p)
    out = export_trace(trace)
    out.update({"example": p.key, "question": p.turn.question, "answer": " ".join(vocab.decode(hyp.content))})
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")
    print(f"{p.key}: {out['answer']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jman", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--events", type=int, default=5)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--turns", type=int, default=4)
    p.add_argument("--two-hop", type=float, default=0.5)
    p.add_argument("--train", type=int, default=64)
    p.add_argument("--valid", type=int, default=16)
    p.add_argument("--test", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    def training_opts(p):
        p.add_argument("--data", required=True)
        p.add_argument("--config")
        p.add_argument("--preset", default="desk", choices=["desk", "paper"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    training_opts(p)
    p.add_argument("--features", default="dh,c,s,rgb,flow")
    p.add_argument("--steps", type=int)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a split and score it")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="greedy", choices=["greedy", "beam"])
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate a feature/step matrix")
    training_opts(p)
    p.add_argument("--matrix")
    p.add_argument("--train-split", default="train")
    p.add_argument("--split", default="valid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="export attention weights for one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--example", required=True, help="turn key <video_id>#<turn> or a video id")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (JmanError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
