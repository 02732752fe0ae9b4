"""Generative LSTM answer decoder.

The decoder starts from ``h0 = tanh(W_init @ context)`` and ``c0 = 0``.
At every step its input is the previous token's embedding concatenated
with the dialogue-history vector; the output layer is dropout followed by
an affine map to vocabulary logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import DataError, ParameterError
from .layers import (
    EOS,
    PAD,
    SOS,
    EmbeddingTable,
    LinearParams,
    LstmParams,
    embed,
    init_linear,
    init_lstm,
    linear,
    lstm_cell,
    lstm_encode,
    uniform_init,
)
from .tensor import Tensor


@dataclass
class DecoderParams:
    init: Tensor  # (d_dec, d_ctx) projection, no bias
    lstm: LstmParams
    out: LinearParams
    dropout: float = 0.2

    def tensors(self) -> dict[str, Tensor]:
        out = {"init.weight": self.init}
        for prefix, part in (("lstm", self.lstm), ("out", self.out)):
            for k, v in part.tensors().items():
                out[f"{prefix}.{k}"] = v
        return out


@dataclass
class AnswerHypothesis:
    tokens: list[int]
    logprob: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def content(self) -> list[int]:
        """Tokens without the trailing eos."""
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else list(self.tokens)


def init_decoder(
    rng: np.random.Generator, d_ctx: int, d_emb: int, d_q: int, d_dec: int, vocab_size: int, dropout: float
) -> DecoderParams:
    return DecoderParams(
        tn.parameter(uniform_init(rng, (d_dec, d_ctx), d_ctx)),
        init_lstm(rng, d_emb + d_q, d_dec),
        init_linear(rng, d_dec, vocab_size),
        dropout,
    )


def initial_state(context: Tensor, params: DecoderParams) -> tuple[Tensor, Tensor]:
    h0 = tn.tanh(tn.matmul(params.init, context))
    return h0, tn.Tensor(np.zeros(h0.shape))


def decode_step(
    prev_token: int,
    h: Tensor,
    c: Tensor,
    D: Tensor,
    params: DecoderParams,
    table: EmbeddingTable,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    x = tn.concat([embed(int(prev_token), table), D])
    h2, c2 = lstm_cell(x, h, c, params.lstm)
    logits = linear(tn.dropout(h2, params.dropout, training, rng), params.out)
    return logits, h2, c2


def teacher_forced_loss(
    context: Tensor,
    D: Tensor,
    answer: Sequence[int],
    params: DecoderParams,
    table: EmbeddingTable,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean token cross-entropy of ``answer`` (which must end with eos)."""
    answer = [int(a) for a in answer]
    if not answer:
        raise DataError("empty answer")
    if answer[-1] != EOS:
        raise DataError("gold answer must end with eos")
    inputs = [SOS] + answer[:-1]
    L = len(answer)
    x = tn.concat([embed(inputs, table), tn.broadcast_rows(D, L)], axis=1)
    h0, _ = initial_state(context, params)
    states, _ = lstm_encode(x, params.lstm, h0)
    logits = linear(tn.dropout(states, params.dropout, training, rng), params.out)
    return tn.cross_entropy(logits, answer, ignore_index=PAD)


def _log_softmax(v: np.ndarray) -> np.ndarray:
    s = v - v.max()
    return s - np.log(np.exp(s).sum())


def _step_logprobs(tok, h, c, D, params, table):
    logits, h, c = decode_step(tok, h, c, D, params, table)
    lp = _log_softmax(logits.data)
    lp[PAD] = -np.inf
    lp[SOS] = -np.inf
    return lp, h, c


def generate(
    context: Tensor,
    D: Tensor,
    params: DecoderParams,
    table: EmbeddingTable,
    mode: str = "greedy",
    beam_size: int = 1,
    max_len: int = 20,
) -> AnswerHypothesis:
    """Decode an answer in eval mode.

    Greedy picks the argmax (lowest id on ties).  Beam search ranks partial
    hypotheses by summed log-probability, breaking ties by token sequence,
    and returns the finished hypothesis with the best per-token score.
    """
    if max_len < 1:
        raise ParameterError(f"max_len must be >= 1, got {max_len}")
    with tn.no_grad():
        h, c = initial_state(context, params)
        if mode == "greedy":
            return _greedy(h, c, D, params, table, max_len)
        if mode == "beam":
            if beam_size < 1:
                raise ParameterError(f"beam size must be >= 1, got {beam_size}")
            return _beam(h, c, D, params, table, beam_size, max_len)
    raise ParameterError(f"unknown decoding mode {mode!r}")


def _greedy(h, c, D, params, table, max_len):
    tokens, total, tok = [], 0.0, SOS
    for _ in range(max_len):
        lp, h, c = _step_logprobs(tok, h, c, D, params, table)
        tok = int(np.argmax(lp))
        tokens.append(tok)
        total += float(lp[tok])
        if tok == EOS:
            break
    return AnswerHypothesis(tokens, total)


def _beam(h, c, D, params, table, k, max_len):
    live = [(0.0, [], h, c)]
    finished = []
    for _ in range(max_len):
        cands = []
        for score, toks, bh, bc in live:
            lp, nh, nc = _step_logprobs(toks[-1] if toks else SOS, bh, bc, D, params, table)
            for v in np.nonzero(np.isfinite(lp))[0]:
                cands.append((score + float(lp[v]), toks + [int(v)], nh, nc))
        cands.sort(key=lambda x: (-x[0], x[1]))
        live = []
        for cand in cands[:k]:
            (finished if cand[1][-1] == EOS else live).append(cand)
        if not live or len(finished) >= k:
            break
    pool = finished + live
    best = min(pool, key=lambda x: (-x[0] / len(x[1]), x[1]))
    return AnswerHypothesis(best[1], best[0])
