"""Dialog datasets, vocabulary, feature files and the synthetic task.

On-disk layout of a dataset directory::

    <split>.jsonl                one dialog per line
    <split>.labels.jsonl         optional latent labels (synthetic data only)
    features/<video_id>.<stream>.jmf

Each JSONL line is ``{"video_id", "caption", "summary", "dialog": [{"question",
"answer"}, ...]}``.  Feature files are ``b"JMF1"``, u32 rows, u32 cols, then
rows*cols little-endian float32 values in row-major order.
"""
from __future__ import annotations

import json
import os
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import tensor as tn
from .core import EncodedExample, ModelConfig
from .errors import DataError, ParameterError
from .layers import (
    EOS,
    PAD,
    UNK,
    EmbeddingTable,
    LstmParams,
    embed,
    init_lstm,
    lstm_encode,
)

FEATURE_STREAMS = {"rgb": "rgb", "flow": "flow", "aud": "audio"}
MAGIC = b"JMF1"
RESERVED = ("<pad>", "<unk>", "<sos>", "<eos>")

_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Token <-> id map with ids 0..3 reserved for pad, unk, sos and eos."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 2) -> Vocabulary:
        counts = Counter(tok for sent in sentences for tok in sent)
        kept = [t for t, n in counts.items() if n >= min_count and t not in RESERVED]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, token: str) -> Optional[int]:
        return self.stoi.get(token)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos[len(RESERVED):])


# -- feature files ----------------------------------------------------------


def write_features(path: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise DataError(f"feature arrays must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"refusing to write non-finite features to {path}")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", *arr.shape) + arr.tobytes(order="C"))


def read_features(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a JMF1 feature file")
    rows, cols = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: contains NaN or Inf")
    return arr


def feature_path(features_dir: str, video_id: str, stream: str) -> str:
    return os.path.join(features_dir, f"{video_id}.{stream}.jmf")


# -- dialogs ----------------------------------------------------------------


@dataclass
class DialogExample:
    video_id: str
    caption: str
    summary: str
    dialog: list[tuple[str, str]]
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "caption": self.caption,
            "summary": self.summary,
            "dialog": [{"question": q, "answer": a} for q, a in self.dialog],
        }


@dataclass
class Turn:
    """One training example: a dialog at turn ``index`` with its history."""

    video_id: str
    index: int
    question: str
    answer: str
    history: list[tuple[str, str]]
    caption: str
    summary: str
    features: dict[str, np.ndarray]
    label: Optional[dict] = None

    @property
    def key(self) -> str:
        return f"{self.video_id}#{self.index}"


def _parse_line(obj, lineno: int, path: str) -> DialogExample:
    if not isinstance(obj, dict):
        raise DataError(f"{path}:{lineno}: expected a JSON object")
    for key in ("video_id", "caption", "summary", "dialog"):
        if key not in obj:
            raise DataError(f"{path}:{lineno}: missing key {key!r}")
    for key in ("video_id", "caption", "summary"):
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise DataError(f"{path}:{lineno}: {key!r} must be a non-empty string")
    dialog = obj["dialog"]
    if not isinstance(dialog, list) or not dialog:
        raise DataError(f"{path}:{lineno}: 'dialog' must be a non-empty list")
    turns = []
    for i, t in enumerate(dialog):
        if not isinstance(t, dict) or "question" not in t or "answer" not in t:
            raise DataError(f"{path}:{lineno}: dialog turn {i} needs 'question' and 'answer'")
        if not str(t["question"]).strip() or not str(t["answer"]).strip():
            raise DataError(f"{path}:{lineno}: dialog turn {i} has empty text")
        turns.append((str(t["question"]), str(t["answer"])))
    return DialogExample(obj["video_id"], obj["caption"], obj["summary"], turns)


def load_dataset(path: str, features_dir: Optional[str] = None, streams: Iterable[str] = ("rgb", "flow", "aud")) -> list[DialogExample]:
    """Read dialogs and attach the listed feature streams (file names use rgb/flow/aud)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            out.append(_parse_line(obj, lineno, path))
    if features_dir is not None:
        streams = list(streams)
        missing = []
        for ex in out:
            for s in streams:
                fp = feature_path(features_dir, ex.video_id, s)
                if not os.path.exists(fp):
                    missing.append(f"{ex.video_id}.{s}")
                    continue
                ex.features[s] = read_features(fp)
        if missing:
            raise DataError(f"missing feature files: {', '.join(missing)}")
    return out


def write_dataset(examples: Sequence[DialogExample], path: str, features_dir: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
    if features_dir is not None:
        os.makedirs(features_dir, exist_ok=True)
        for ex in examples:
            for s, arr in sorted(ex.features.items()):
                write_features(feature_path(features_dir, ex.video_id, s), arr)


def load_labels(path: str) -> dict[str, dict]:
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return {r["video_id"]: r for r in rows}


def expand_turns(examples: Sequence[DialogExample], labels: Optional[dict] = None) -> list[Turn]:
    """One Turn per dialog turn, with history = all earlier turns."""
    labels = labels or {}
    out = []
    for ex in examples:
        lab = labels.get(ex.video_id)
        for t, (q, a) in enumerate(ex.dialog):
            turn_label = lab["turns"][t] if lab and t < len(lab.get("turns", [])) else None
            out.append(Turn(ex.video_id, t, q, a, list(ex.dialog[:t]), ex.caption, ex.summary, ex.features, turn_label))
    return out


def build_vocab(examples: Sequence[DialogExample], min_count: int = 2) -> Vocabulary:
    sents = []
    for ex in examples:
        sents.append(tokenize(ex.caption))
        sents.append(tokenize(ex.summary))
        for q, a in ex.dialog:
            sents.append(tokenize(q))
            sents.append(tokenize(a))
    return Vocabulary.build(sents, min_count)


# -- encoding -----------------------------------------------------------------


@dataclass
class PreparedTurn:
    """Token ids and raw feature arrays for one Turn."""

    key: str
    question: list[int]
    answer: list[int]  # ends with eos
    history: list[int]  # [PAD] when there is no history
    caption: list[int]
    summary: list[int]
    features: dict[str, np.ndarray]
    turn: Turn


def prepare_turn(turn: Turn, vocab: Vocabulary) -> PreparedTurn:
    def ids(text):
        return vocab.encode(tokenize(text)) or [PAD]

    hist = []
    for q, a in turn.history:
        hist += vocab.encode(tokenize(q)) + vocab.encode(tokenize(a))
    answer = vocab.encode(tokenize(turn.answer)) + [EOS]
    return PreparedTurn(
        turn.key, ids(turn.question), answer, hist or [PAD], ids(turn.caption), ids(turn.summary), turn.features, turn
    )


@dataclass
class Encoders:
    emb: EmbeddingTable
    question: LstmParams
    history: LstmParams
    caption: Optional[LstmParams] = None
    summary: Optional[LstmParams] = None
    rgb: Optional[LstmParams] = None
    flow: Optional[LstmParams] = None
    audio: Optional[LstmParams] = None

    def tensors(self) -> dict[str, tn.Tensor]:
        out = {"emb.weight": self.emb.weight}
        for name in ("question", "history", "caption", "summary", "rgb", "flow", "audio"):
            p = getattr(self, name)
            if p is not None:
                for k, v in p.tensors().items():
                    out[f"enc.{name}.{k}"] = v
        return out


def init_encoders(rng: np.random.Generator, config: ModelConfig, emb: EmbeddingTable) -> Encoders:
    enc = Encoders(emb, init_lstm(rng, config.d_emb, config.d_q), init_lstm(rng, config.d_emb, config.d_q))
    streams = config.streams
    if "caption" in streams:
        enc.caption = init_lstm(rng, config.d_emb, config.d_t)
    if "summary" in streams:
        enc.summary = init_lstm(rng, config.d_emb, config.d_t)
    if "rgb" in streams:
        enc.rgb = init_lstm(rng, config.rgb_in, config.d_v)
    if "flow" in streams:
        enc.flow = init_lstm(rng, config.flow_in, config.d_v)
    if "audio" in streams:
        enc.audio = init_lstm(rng, config.aud_in, config.d_a)
    return enc


def _feature_seq(p: PreparedTurn, file_stream: str, params: LstmParams) -> tn.Tensor:
    arr = p.features.get(file_stream)
    if arr is None:
        raise DataError(f"{p.key}: missing {file_stream} features")
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != params.input_dim:
        raise DataError(f"{p.key}: {file_stream} features have shape {arr.shape}, expected (T, {params.input_dim})")
    return lstm_encode(tn.Tensor(arr), params)[0]


def encode_example(p: PreparedTurn, enc: Encoders) -> EncodedExample:
    """Run every enabled encoder over one prepared turn."""
    def text_states(ids, params):
        return lstm_encode(embed(ids, enc.emb), params)

    out = EncodedExample(Q0=text_states(p.question, enc.question)[1], D=text_states(p.history, enc.history)[1])
    if enc.caption is not None:
        out.C0 = text_states(p.caption, enc.caption)[0]
    if enc.summary is not None:
        out.S0 = text_states(p.summary, enc.summary)[0]
    if enc.rgb is not None:
        out.R0 = _feature_seq(p, "rgb", enc.rgb)
    if enc.flow is not None:
        out.F0 = _feature_seq(p, "flow", enc.flow)
    if enc.audio is not None:
        out.A0 = _feature_seq(p, "aud", enc.audio)
    return out


# -- synthetic task -----------------------------------------------------------

VERBS = (
    "runs", "jumps", "sits", "waves", "eats", "reads",
    "sleeps", "dances", "cooks", "laughs", "walks", "sings",
)


@dataclass
class SynthConfig:
    n_events: int = 5
    segments: int = 3
    frames_per_segment: int = 2
    noise: float = 0.1
    turns: int = 4
    two_hop_prob: float = 0.5
    aud_dim: int = 8
    sizes: dict = field(default_factory=lambda: {"train": 64, "valid": 16, "test": 16})
    seed: int = 0

    def validate(self) -> None:
        if self.n_events < 2 or self.segments < 2:
            raise ParameterError("synthetic task needs at least 2 event types and 2 segments")
        if self.n_events > len(VERBS):
            raise ParameterError(f"at most {len(VERBS)} event types are available")
        if self.segments > self.n_events:
            raise ParameterError("segments must not exceed event types (events in a video are distinct)")
        if self.noise < 0 or self.frames_per_segment < 1 or self.turns < 1:
            raise ParameterError("noise must be >= 0; frames_per_segment and turns >= 1")
        if not 0.0 <= self.two_hop_prob <= 1.0:
            raise ParameterError("two_hop_prob must lie in [0, 1]")


def _synth_video(cfg: SynthConfig, rng: np.random.Generator, video_id: str) -> tuple[DialogExample, dict]:
    E, K, f = cfg.n_events, cfg.segments, cfg.frames_per_segment
    events = [int(e) for e in rng.permutation(E)[:K]]
    verbs = [VERBS[e] for e in events]
    rows = K * f
    rgb = np.zeros((rows, E))
    flow = np.zeros((rows, 2))
    for k, e in enumerate(events):
        rgb[k * f : (k + 1) * f, e] = 1.0
        flow[k * f, 0] = 1.0
        flow[k * f + 1 : (k + 1) * f, 1] = 1.0
    rgb += cfg.noise * rng.standard_normal(rgb.shape)
    flow += cfg.noise * rng.standard_normal(flow.shape)
    aud = rng.standard_normal((rows, cfg.aud_dim))

    caption = "first the person " + " , then the person ".join(verbs) + " ."
    summary = " ".join(f"in segment {k + 1} the person {v} ." for k, v in enumerate(verbs))
    dialog, turn_labels = [], []
    for _ in range(cfg.turns):
        if rng.random() < cfg.two_hop_prob:
            k = int(rng.integers(0, K - 1))
            q, seg, hop = f"what happens after the person {verbs[k]} ?", k + 1, 2
        else:
            k = int(rng.integers(0, K))
            q, seg, hop = f"what happens in segment {k + 1} ?", k, 1
        # verb first: the decoder must read it off h0 at step one instead of after a fixed preamble
        dialog.append((q, f"{verbs[seg]} is what happens ."))
        turn_labels.append({"gold_segment": seg, "hop": hop, "frames": list(range(seg * f, (seg + 1) * f))})
    ex = DialogExample(video_id, caption, summary, dialog, {"rgb": rgb, "flow": flow, "aud": aud})
    return ex, {"video_id": video_id, "events": verbs, "turns": turn_labels}


def synth_generate(cfg: SynthConfig, rng: Optional[np.random.Generator] = None) -> dict[str, tuple[list[DialogExample], list[dict]]]:
    """Generate every split in ``cfg.sizes``; returns ``{split: (dialogs, labels)}``.

    Answers are a pure function of each video's latent event order.
    """
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out = {}
    for split in sorted(cfg.sizes):
        dialogs, labels = [], []
        for i in range(cfg.sizes[split]):
            ex, lab = _synth_video(cfg, rng, f"{split}{i:04d}")
            # round through float32 so in-memory data equals what is written to disk
            ex.features = {k: v.astype("<f4").astype(np.float64) for k, v in ex.features.items()}
            dialogs.append(ex)
            labels.append(lab)
        out[split] = (dialogs, labels)
    return out


def write_synth(out_dir: str, cfg: SynthConfig) -> dict[str, tuple[list[DialogExample], list[dict]]]:
    splits = synth_generate(cfg)
    os.makedirs(out_dir, exist_ok=True)
    for split, (dialogs, labels) in splits.items():
        write_dataset(dialogs, os.path.join(out_dir, f"{split}.jsonl"), os.path.join(out_dir, "features"))
        with open(os.path.join(out_dir, f"{split}.labels.jsonl"), "w", encoding="utf-8") as fh:
            for lab in labels:
                fh.write(json.dumps(lab, sort_keys=True) + "\n")
    return splits


def load_split(data_dir: str, split: str, streams: Iterable[str] = ("rgb", "flow", "aud")) -> list[Turn]:
    """Load ``<data_dir>/<split>.jsonl`` with features and labels, expanded to turns."""
    path = os.path.join(data_dir, f"{split}.jsonl")
    if not os.path.exists(path):
        raise DataError(f"dataset split not found: {path}")
    dialogs = load_dataset(path, os.path.join(data_dir, "features"), streams)
    labels = load_labels(os.path.join(data_dir, f"{split}.labels.jsonl"))
    return expand_turns(dialogs, labels)

