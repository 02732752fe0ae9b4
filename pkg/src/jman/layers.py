"""Recurrent and dense building blocks.

The LSTM and GRU cells are fused tape ops with hand-written backward
passes; ``lstm_encode`` runs the exact per-step kernel used by
``lstm_cell`` so an unrolled fold of cells reproduces it bit for bit.
Gate order is (input, forget, cell, output) for the LSTM and
(reset, update, candidate) for the GRU.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import DataError, UsageError
from .tensor import Tensor, _make, _sigmoid

PAD, UNK, SOS, EOS = 0, 1, 2, 3


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LstmParams:
    w_ih: Tensor  # (4h, d_in)
    w_hh: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "b": self.b}


@dataclass
class GruParams:
    w_ih: Tensor  # (3h, d_in)
    w_hh: Tensor  # (3h, h)
    b: Tensor  # (3h,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_ih": self.w_ih, "w_hh": self.w_hh, "b": self.b}


@dataclass
class LinearParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class EmbeddingTable:
    weight: Tensor  # (V, d)
    pad: int = PAD

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"weight": self.weight}


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int) -> LstmParams:
    w_ih = uniform_init(rng, (4 * hidden, d_in), d_in)
    w_hh = uniform_init(rng, (4 * hidden, hidden), hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate
    return LstmParams(tn.parameter(w_ih), tn.parameter(w_hh), tn.parameter(b))


def init_gru(rng: np.random.Generator, d_in: int, hidden: int) -> GruParams:
    w_ih = uniform_init(rng, (3 * hidden, d_in), d_in)
    w_hh = uniform_init(rng, (3 * hidden, hidden), hidden)
    return GruParams(tn.parameter(w_ih), tn.parameter(w_hh), tn.parameter(np.zeros(3 * hidden)))


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> LinearParams:
    w = uniform_init(rng, (d_out, d_in), d_in)
    return LinearParams(tn.parameter(w), tn.parameter(np.zeros(d_out)))


def init_embedding(rng: np.random.Generator, vocab_size: int, dim: int) -> EmbeddingTable:
    # a lookup is a one-hot product with exactly one active input, so fan_in = 1
    w = uniform_init(rng, (vocab_size, dim), 1)
    w[PAD] = 0.0
    return EmbeddingTable(tn.parameter(w))


# -- LSTM -------------------------------------------------------------------


def _lstm_kernel(x, h, c, w_ih, w_hh, b):
    H = h.shape[0]
    g = w_ih @ x + w_hh @ h + b
    s = _sigmoid(g)
    i, f, o = s[:H], s[H : 2 * H], s[3 * H :]
    u = np.tanh(g[2 * H : 3 * H])
    c2 = f * c + i * u
    tc = np.tanh(c2)
    return o * tc, c2, (i, f, u, o, tc)


def _lstm_gate_grads(dh, dc_in, c_prev, cache):
    """Back-propagate one step; returns (d pre-activations, d c_prev)."""
    i, f, u, o, tc = cache
    H = dh.shape[0]
    dc = dh * o * (1.0 - tc * tc) + dc_in
    dg = np.empty(4 * H)
    dg[:H] = dc * u * i * (1.0 - i)
    dg[H : 2 * H] = dc * c_prev * f * (1.0 - f)
    dg[2 * H : 3 * H] = dc * i * (1.0 - u * u)
    dg[3 * H :] = dh * tc * o * (1.0 - o)
    return dg, dc * f


def _check_lstm(x_dim: int, h: np.ndarray, p: LstmParams) -> None:
    if x_dim != p.input_dim or h.shape != (p.hidden,):
        raise UsageError(
            f"lstm: input dim {x_dim} / hidden {h.shape} do not match params "
            f"({p.input_dim} -> {p.hidden})"
        )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns ``(h', c')``."""
    _check_lstm(x.shape[0] if x.ndim == 1 else -1, h.data, p)
    if c.shape != h.shape:
        raise UsageError(f"lstm_cell: cell shape {c.shape} != hidden shape {h.shape}")
    X, Hp, Cp = x.data, h.data, c.data
    W, U, B = p.w_ih.data, p.w_hh.data, p.b.data
    h2, c2, cache = _lstm_kernel(X, Hp, Cp, W, U, B)
    H = Hp.shape[0]

    def bw(g):
        dh, dc = g[:H], g[H:]
        dg, dc_prev = _lstm_gate_grads(dh, dc, Cp, cache)
        return W.T @ dg, U.T @ dg, dc_prev, np.outer(dg, X), np.outer(dg, Hp), dg

    hc = _make(np.concatenate([h2, c2]), (x, h, c, p.w_ih, p.w_hh, p.b), bw)
    return tn.take(hc, 0, H), tn.take(hc, H, 2 * H)


def lstm_encode(seq: Tensor, p: LstmParams, h0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Run an LSTM over the rows of ``seq`` (T, d_in) from zero cell state.

    Returns ``(states, final)`` where ``states`` is (T, h) and ``final`` is
    the last row.  ``h0`` defaults to zeros.
    """
    X = seq.data
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"lstm_encode needs a non-empty (T, d) sequence, got shape {X.shape}")
    H = p.hidden
    H0 = np.zeros(H) if h0 is None else h0.data
    _check_lstm(X.shape[1], H0, p)
    W, U, B = p.w_ih.data, p.w_hh.data, p.b.data
    T = X.shape[0]
    states = np.empty((T, H))
    cells = np.empty((T + 1, H))
    cells[0] = 0.0
    caches = []
    h = H0
    for t in range(T):
        h, cells[t + 1], cache = _lstm_kernel(X[t], h, cells[t], W, U, B)
        states[t] = h
        caches.append(cache)

    def bw(g):
        dG = np.empty((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            dG[t], dc_next = _lstm_gate_grads(g[t] + dh_next, dc_next, cells[t], caches[t])
            dh_next = U.T @ dG[t]
        h_prev = np.vstack([H0[None, :], states[:-1]])
        grads = [dG @ W, dG.T @ X, dG.T @ h_prev, dG.sum(axis=0)]
        if h0 is not None:
            grads.append(dh_next)
        return tuple(grads)

    parents = (seq, p.w_ih, p.w_hh, p.b) + ((h0,) if h0 is not None else ())
    out = _make(states, parents, bw)
    return out, _last_row(out)


def _last_row(states: Tensor) -> Tensor:
    T, H = states.shape
    S = states.data

    def bw(g):
        full = np.zeros_like(S)
        full[T - 1] = g
        return (full,)

    return _make(S[T - 1], (states,), bw)


# -- GRU --------------------------------------------------------------------


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One GRU step: ``h' = (1 - u) * h + u * n``."""
    X, Hp = x.data, h.data
    W, U, B = p.w_ih.data, p.w_hh.data, p.b.data
    H = p.hidden
    if X.ndim != 1 or X.shape[0] != W.shape[1] or Hp.shape != (H,):
        raise UsageError(f"gru_cell: input {X.shape} / hidden {Hp.shape} do not match params {W.shape}")
    gi = W @ X + B
    gh = U @ Hp
    r = _sigmoid(gi[:H] + gh[:H])
    u = _sigmoid(gi[H : 2 * H] + gh[H : 2 * H])
    n = np.tanh(gi[2 * H :] + r * gh[2 * H :])
    out = (1.0 - u) * Hp + u * n

    def bw(g):
        dn = g * u * (1.0 - n * n)
        dr = dn * gh[2 * H :] * r * (1.0 - r)
        du = g * (n - Hp) * u * (1.0 - u)
        dgi = np.concatenate([dr, du, dn])
        dgh = np.concatenate([dr, du, dn * r])
        return W.T @ dgi, g * (1.0 - u) + U.T @ dgh, np.outer(dgi, X), np.outer(dgh, Hp), dgi

    return _make(out, (x, h, p.w_ih, p.w_hh, p.b), bw)


# -- dense ----------------------------------------------------------------


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Affine map of a vector or of each row of a (T, in) matrix."""
    if x.ndim == 1:
        return tn.add(tn.matmul(p.weight, x), p.bias)
    return tn.add(tn.matmul(x, tn.transpose(p.weight)), p.bias)


def embed(tokens: Sequence[int] | int, table: EmbeddingTable) -> Tensor:
    """Look up token rows; the pad row never receives gradient.

    A single int gives a vector, a sequence gives a (len, d) matrix.
    """
    V = table.vocab_size
    for t in np.atleast_1d(tokens):
        if not 0 <= t < V:
            raise DataError(f"token id {t} outside vocabulary of size {V}")
    return tn.gather_rows(table.weight, tokens, skip_index=table.pad)


def load_pretrained(path: str, vocab, table: EmbeddingTable) -> int:
    """Overwrite rows of ``table`` from a ``word v1 ... vd`` text file.

    Tokens absent from the file keep their random initialisation.
    Returns the number of rows replaced.
    """
    d = table.dim
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != d:
                raise DataError(f"{path}:{lineno}: expected {d} values for {word!r}, got {len(values)}")
            idx = vocab.lookup(word)
            if idx is None or idx == table.pad:
                continue
            table.weight.data[idx] = np.array(values, dtype=np.float64)
            hits += 1
    return hits
