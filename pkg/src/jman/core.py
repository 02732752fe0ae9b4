"""Multi-step joint-modality attention.

One reasoning step:

1. gate the question state with a self-attention over its own components,
2. attend over each enabled feature stream with the gated question, where
   visual streams also see the previous joint textual feature and textual
   streams the previous joint visual feature,
3. pool every attended stream over time, sum pooled visual streams into the
   joint visual feature and pooled textual streams into the joint textual
   feature,
4. concatenate the pooled streams into the context vector,
5. update the question state with a GRU fed by the context vector.

The joint features start at zero, so step 1 coincides with plain
question-only attention.  Attended streams stay sequences: each step
reweights the rows of the previous step's sequence.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import tensor as tn
from .errors import ParameterError, UsageError
from .layers import GruParams, gru_cell, init_gru, uniform_init
from .tensor import Tensor

ALL_FEATURES = ("dh", "c", "s", "rgb", "flow", "aud")
STREAM_OF_FEATURE = {"rgb": "rgb", "flow": "flow", "c": "caption", "s": "summary", "aud": "audio"}
STREAM_ORDER = ("rgb", "flow", "caption", "summary", "audio")
VISUAL = ("rgb", "flow")
TEXTUAL = ("caption", "summary")


def parse_features(spec) -> tuple[str, ...]:
    """Normalise a feature list such as ``"dh,c,s"`` into canonical order."""
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    items = [s.strip().lower() for s in items if s.strip()]
    unknown = sorted(set(items) - set(ALL_FEATURES))
    if unknown:
        raise ParameterError(f"unknown features {unknown}; choose from {','.join(ALL_FEATURES)}")
    if "dh" not in items:
        raise ParameterError("feature list must contain 'dh'")
    return tuple(f for f in ALL_FEATURES if f in items)


@dataclass
class ModelConfig:
    steps: int = 5
    features: tuple = ("dh", "c", "s", "rgb", "flow")
    d_v: int = 64
    d_t: int = 32
    d_a: int = 32
    d_q: int = 32
    d_att: int = 64
    d_emb: int = 32
    d_dec: int = 64
    rgb_in: int = 8
    flow_in: int = 2
    aud_in: int = 8
    dropout: float = 0.2
    max_len: int = 20
    seed: int = 0

    def __post_init__(self):
        self.features = parse_features(self.features)
        if self.steps < 1:
            raise ParameterError(f"reasoning steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("d_v", "d_t", "d_a", "d_q", "d_att", "d_emb", "d_dec", "rgb_in", "flow_in", "aud_in"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")

    @property
    def streams(self) -> tuple[str, ...]:
        enabled = {STREAM_OF_FEATURE[f] for f in self.features if f != "dh"}
        return tuple(s for s in STREAM_ORDER if s in enabled)

    def stream_dim(self, stream: str) -> int:
        if stream in VISUAL:
            return self.d_v
        if stream in TEXTUAL:
            return self.d_t
        return self.d_a

    @property
    def d_z(self) -> int:
        return int(np.sum([self.stream_dim(s) for s in self.streams], dtype=int))

    @property
    def joint(self) -> bool:
        """True when visual and textual groups exchange joint features."""
        s = self.streams
        return any(x in s for x in VISUAL) and any(x in s for x in TEXTUAL)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class EncodedExample:
    Q0: Tensor
    D: Tensor
    R0: Optional[Tensor] = None
    F0: Optional[Tensor] = None
    C0: Optional[Tensor] = None
    S0: Optional[Tensor] = None
    A0: Optional[Tensor] = None

    def stream(self, name: str) -> Optional[Tensor]:
        return {"rgb": self.R0, "flow": self.F0, "caption": self.C0, "summary": self.S0, "audio": self.A0}[name]


class StreamAttention(NamedTuple):
    w_x: Tensor  # (d_att, d_stream)
    p_x: Tensor  # (d_att,)
    w_q: Tensor  # (d_att, d_q)
    w_cross: Optional[Tensor]  # (d_att, d_other) for joint streams


@dataclass
class AttentionParams:
    w_Q: Tensor
    p_Q: Tensor
    w_x: dict[str, Tensor]
    p_x: dict[str, Tensor]
    w_q: dict[str, Tensor]  # keyed by group: visual / textual / mono
    w_T: Optional[Tensor]
    w_V: Optional[Tensor]
    gru: GruParams

    def for_stream(self, name: str) -> StreamAttention:
        if name in VISUAL:
            return StreamAttention(self.w_x[name], self.p_x[name], self.w_q["visual"], self.w_T)
        if name in TEXTUAL:
            return StreamAttention(self.w_x[name], self.p_x[name], self.w_q["textual"], self.w_V)
        return StreamAttention(self.w_x[name], self.p_x[name], self.w_q["mono"], None)

    def tensors(self) -> dict[str, Tensor]:
        out = {"w_Q": self.w_Q, "p_Q": self.p_Q}
        for s in self.w_x:
            out[f"{s}.w_x"] = self.w_x[s]
            out[f"{s}.p_x"] = self.p_x[s]
        for g, w in self.w_q.items():
            out[f"w_q.{g}"] = w
        if self.w_T is not None:
            out["w_T"] = self.w_T
        if self.w_V is not None:
            out["w_V"] = self.w_V
        for k, v in self.gru.tensors().items():
            out[f"gru.{k}"] = v
        return out


def init_attention(rng: np.random.Generator, config: ModelConfig) -> AttentionParams:
    streams = config.streams
    if not streams:
        raise UsageError("attention parameters need at least one enabled stream")
    d_q, d_att = config.d_q, config.d_att

    def mat(rows, cols):
        return tn.parameter(uniform_init(rng, (rows, cols), cols))

    w_Q = mat(d_q, d_q)
    p_Q = tn.parameter(uniform_init(rng, (d_q,), d_q))
    w_x, p_x = {}, {}
    for s in streams:
        w_x[s] = mat(d_att, config.stream_dim(s))
        p_x[s] = tn.parameter(uniform_init(rng, (d_att,), d_att))
    w_q = {}
    if any(s in VISUAL for s in streams):
        w_q["visual"] = mat(d_att, d_q)
    if any(s in TEXTUAL for s in streams):
        w_q["textual"] = mat(d_att, d_q)
    if "audio" in streams:
        w_q["mono"] = mat(d_att, d_q)
    w_T = mat(d_att, config.d_t) if config.joint else None
    w_V = mat(d_att, config.d_v) if config.joint else None
    gru = init_gru(rng, config.d_z, d_q)
    return AttentionParams(w_Q, p_Q, w_x, p_x, w_q, w_T, w_V, gru)


@dataclass
class ReasoningState:
    n: int
    Q: Tensor
    seqs: dict[str, Tensor]
    V: Tensor
    T: Tensor
    z: Optional[Tensor] = None
    Q_hat: Optional[Tensor] = None
    alpha_q: Optional[np.ndarray] = None
    alphas: dict[str, np.ndarray] = field(default_factory=dict)


def self_attend_question(Q_prev: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Component-wise self-attention gate on the question state."""
    scores = tn.mul(params.p_Q, tn.tanh(tn.matmul(params.w_Q, Q_prev)))
    alpha = tn.softmax(scores)
    return tn.mul(alpha, Q_prev), alpha


def attend_stream(
    x_prev: Tensor, q_hat: Tensor, p: StreamAttention, cross: Optional[Tensor] = None
) -> tuple[Tensor, Tensor, Tensor]:
    """Attend over the rows of ``x_prev``; returns ``(x_next, alpha, pooled)``.

    With ``cross`` omitted this is the question-only form.  A zero ``cross``
    vector yields bit-identical results to omitting it.
    """
    if x_prev.ndim != 2 or x_prev.shape[1] != p.w_x.shape[1]:
        raise UsageError(f"stream shape {x_prev.shape} does not match projection {p.w_x.shape}")
    if cross is not None and p.w_cross is None:
        raise UsageError("cross feature supplied for a stream without a cross projection")
    query = tn.matmul(p.w_q, q_hat)
    if cross is not None:
        query = tn.add(query, tn.matmul(p.w_cross, cross))
    keys = tn.matmul(x_prev, tn.transpose(p.w_x))
    scores = tn.matmul(tn.tanh(tn.add(keys, query)), p.p_x)
    alpha = tn.softmax(scores)
    x_next = tn.rowscale(x_prev, alpha)
    return x_next, alpha, tn.sum(x_next, axis=0)


def initial_state(enc: EncodedExample, config: ModelConfig) -> ReasoningState:
    seqs = {}
    for s in config.streams:
        x = enc.stream(s)
        if x is None:
            raise UsageError(f"stream {s!r} is enabled but missing from the encoded example")
        seqs[s] = x
    return ReasoningState(0, enc.Q0, seqs, tn.Tensor(np.zeros(config.d_v)), tn.Tensor(np.zeros(config.d_t)))


def _total(vectors: list[Tensor], dim: int) -> Tensor:
    if not vectors:
        return tn.Tensor(np.zeros(dim))
    out = vectors[0]
    for v in vectors[1:]:
        out = tn.add(out, v)
    return out


def reasoning_step(state: ReasoningState, params: AttentionParams, config: ModelConfig) -> ReasoningState:
    if set(state.seqs) != set(config.streams):
        raise UsageError(f"state streams {sorted(state.seqs)} do not match config {list(config.streams)}")
    q_hat, alpha_q = self_attend_question(state.Q, params)
    seqs, pooled, alphas = {}, {}, {}
    for s in config.streams:
        cross = None
        if config.joint and s in VISUAL:
            cross = state.T
        elif config.joint and s in TEXTUAL:
            cross = state.V
        seqs[s], alpha, pooled[s] = attend_stream(state.seqs[s], q_hat, params.for_stream(s), cross)
        alphas[s] = alpha.data
    V = _total([pooled[s] for s in VISUAL if s in pooled], config.d_v)
    T = _total([pooled[s] for s in TEXTUAL if s in pooled], config.d_t)
    z = tn.concat([pooled[s] for s in config.streams])
    Q_next = gru_cell(z, q_hat, params.gru)
    return ReasoningState(state.n + 1, Q_next, seqs, V, T, z, q_hat, alpha_q.data, alphas)


def run_reasoning(
    enc: EncodedExample, params: AttentionParams, config: ModelConfig
) -> tuple[Tensor, list[ReasoningState]]:
    """Apply ``config.steps`` reasoning steps; returns the final context and every step state."""
    state = initial_state(enc, config)
    trace = []
    for _ in range(config.steps):
        state = reasoning_step(state, params, config)
        trace.append(state)
    return state.z, trace


def export_trace(trace: list[ReasoningState]) -> dict:
    return {
        "steps": [
            {
                "n": st.n,
                "streams": {s: [float(v) for v in a] for s, a in st.alphas.items()},
                "alpha_q": [float(v) for v in st.alpha_q],
            }
            for st in trace
        ]
    }
