"""Full network: encoders, reasoning core and answer decoder behind one object."""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as tn
from .core import AttentionParams, ModelConfig, ReasoningState, init_attention, run_reasoning
from .data import Encoders, PreparedTurn, encode_example, init_encoders
from .decoder import AnswerHypothesis, DecoderParams, generate, init_decoder, teacher_forced_loss
from .errors import DataError
from .layers import init_embedding
from .tensor import Tensor


class JMAN:
    """Parameter registry plus forward passes for one :class:`ModelConfig`.

    Without any attention stream (features ``dh`` only) the decoder is
    initialised from the concatenated question and history encodings.
    """

    def __init__(self, config: ModelConfig, vocab_size: int):
        self.config = config
        self.vocab_size = vocab_size
        rng = np.random.default_rng(config.seed)
        emb = init_embedding(rng, vocab_size, config.d_emb)
        self.encoders: Encoders = init_encoders(rng, config, emb)
        self.attention: Optional[AttentionParams] = init_attention(rng, config) if config.streams else None
        d_ctx = config.d_z if config.streams else 2 * config.d_q
        self.decoder: DecoderParams = init_decoder(
            rng, d_ctx, config.d_emb, config.d_q, config.d_dec, vocab_size, config.dropout
        )

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.encoders.tensors())
        if self.attention is not None:
            params.update({f"att.{k}": v for k, v in self.attention.tensors().items()})
        params.update({f"dec.{k}": v for k, v in self.decoder.tensors().items()})
        return params

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            extra = sorted(set(state) - set(params))
            missing = sorted(set(params) - set(state))
            raise DataError(f"checkpoint tensors do not match the model: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if arr.shape != params[name].shape:
                raise DataError(f"tensor {name}: checkpoint shape {arr.shape} != model shape {params[name].shape}")
            params[name].data[...] = arr

    def context(self, p: PreparedTurn) -> tuple[Tensor, Tensor, list[ReasoningState]]:
        """Encode a turn and reason over it; returns ``(context, D, trace)``."""
        enc = encode_example(p, self.encoders)
        if self.attention is None:
            return tn.concat([enc.Q0, enc.D]), enc.D, []
        z, trace = run_reasoning(enc, self.attention, self.config)
        return z, enc.D, trace

    def loss(self, p: PreparedTurn, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        ctx, D, _ = self.context(p)
        return teacher_forced_loss(ctx, D, p.answer, self.decoder, self.encoders.emb, training, rng)

    def generate(
        self, p: PreparedTurn, mode: str = "greedy", beam_size: int = 1, max_len: Optional[int] = None
    ) -> tuple[AnswerHypothesis, list[ReasoningState]]:
        with tn.no_grad():
            ctx, D, trace = self.context(p)
            hyp = generate(
                ctx, D, self.decoder, self.encoders.emb, mode, beam_size,
                self.config.max_len if max_len is None else max_len,
            )
        return hyp, trace
