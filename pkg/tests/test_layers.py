import numpy as np
import pytest

from jman import layers as L
from jman import tensor as tn
from jman.data import Vocabulary
from jman.errors import DataError, UsageError
from jman.tensor import Tensor


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def lstm_oracle(x, h, c, w_ih, w_hh, b):
    H = h.shape[0]
    g = w_ih @ x + w_hh @ h + b
    i, f, u, o = sig(g[:H]), sig(g[H : 2 * H]), np.tanh(g[2 * H : 3 * H]), sig(g[3 * H :])
    c2 = f * c + i * u
    return o * np.tanh(c2), c2


def gru_oracle(x, h, w_ih, w_hh, b):
    H = h.shape[0]
    gi, gh = w_ih @ x + b, w_hh @ h
    r = sig(gi[:H] + gh[:H])
    u = sig(gi[H : 2 * H] + gh[H : 2 * H])
    n = np.tanh(gi[2 * H :] + r * gh[2 * H :])
    return (1 - u) * h + u * n, n, u


def zero_lstm(d_in, H):
    z = lambda *s: tn.parameter(np.zeros(s))  # noqa: E731
    return L.LstmParams(z(4 * H, d_in), z(4 * H, H), z(4 * H))


def test_init_shapes_bias_and_bounds(rng):
    p = L.init_lstm(rng, 3, 4)
    assert p.w_ih.shape == (16, 3) and p.w_hh.shape == (16, 4) and p.b.shape == (16,)
    np.testing.assert_array_equal(p.b.data[4:8], 1.0)
    np.testing.assert_array_equal(p.b.data[:4], 0.0)
    assert np.abs(p.w_ih.data).max() <= 1 / np.sqrt(3)
    assert np.abs(p.w_hh.data).max() <= 1 / np.sqrt(4)
    lin = L.init_linear(rng, 9, 2)
    assert np.abs(lin.weight.data).max() <= 1 / 3


def test_init_is_seed_deterministic():
    a = L.init_lstm(np.random.default_rng(5), 3, 4)
    b = L.init_lstm(np.random.default_rng(5), 3, 4)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.tensors().values(), b.tensors().values()))


def test_lstm_cell_zero_fixed_point():
    h, c = L.lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), zero_lstm(3, 4))
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_cell_matches_oracle(rng):
    p = L.init_lstm(rng, 3, 4)
    x, h, c = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(4)
    h2, c2 = L.lstm_cell(Tensor(x), Tensor(h), Tensor(c), p)
    oh, oc = lstm_oracle(x, h, c, p.w_ih.data, p.w_hh.data, p.b.data)
    np.testing.assert_allclose(h2.data, oh, rtol=0, atol=1e-14)
    np.testing.assert_allclose(c2.data, oc, rtol=0, atol=1e-14)


def test_lstm_gates_in_open_interval(rng):
    p = L.init_lstm(rng, 3, 4)
    s = L._sigmoid(p.w_ih.data @ rng.standard_normal(3) + p.b.data)
    assert ((s > 0) & (s < 1)).all()


def test_lstm_cell_dim_mismatch(rng):
    p = L.init_lstm(rng, 3, 4)
    with pytest.raises(UsageError):
        L.lstm_cell(Tensor(np.zeros(2)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), p)
    with pytest.raises(UsageError):
        L.lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(4)), Tensor(np.zeros(3)), p)


def test_lstm_cell_gradient(rng):
    p = L.init_lstm(rng, 3, 4)
    x, h, c = (tn.parameter(rng.standard_normal(n)) for n in (3, 4, 4))
    w1, w2 = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))

    def loss():
        h2, c2 = L.lstm_cell(x, h, c, p)
        return tn.add(tn.sum(tn.mul(h2, w1)), tn.sum(tn.mul(c2, w2)))

    assert tn.gradcheck(loss, [x, h, c, *p.tensors().values()]) <= 1e-4


def test_lstm_encode_equals_cell_fold_bitwise(rng):
    p = L.init_lstm(rng, 3, 5)
    seq = rng.standard_normal((5, 3))
    states, final = L.lstm_encode(Tensor(seq), p)
    h, c = Tensor(np.zeros(5)), Tensor(np.zeros(5))
    for t in range(5):
        h, c = L.lstm_cell(Tensor(seq[t]), h, c, p)
        assert np.array_equal(states.data[t], h.data)
    assert np.array_equal(final.data, states.data[-1])


def test_lstm_encode_prefix_and_length_one(rng):
    p = L.init_lstm(rng, 2, 3)
    seq = rng.standard_normal((6, 2))
    full, _ = L.lstm_encode(Tensor(seq), p)
    part, _ = L.lstm_encode(Tensor(seq[:4]), p)
    assert np.array_equal(full.data[:4], part.data)
    one, fin = L.lstm_encode(Tensor(seq[:1]), p)
    assert one.shape == (1, 3) and np.array_equal(one.data[0], fin.data)


def test_lstm_encode_empty_is_data_error(rng):
    with pytest.raises(DataError):
        L.lstm_encode(Tensor(np.zeros((0, 2))), L.init_lstm(rng, 2, 3))


def test_lstm_encode_gradient(rng):
    p = L.init_lstm(rng, 3, 4)
    seq = tn.parameter(rng.standard_normal((5, 3)))
    h0 = tn.parameter(rng.standard_normal(4))
    w, wf = Tensor(rng.standard_normal((5, 4))), Tensor(rng.standard_normal(4))

    def loss():
        states, final = L.lstm_encode(seq, p, h0)
        return tn.add(tn.sum(tn.mul(states, w)), tn.sum(tn.mul(final, wf)))

    assert tn.gradcheck(loss, [seq, h0, *p.tensors().values()]) <= 1e-4


def test_gru_matches_oracle_and_is_convex(rng):
    p = L.init_gru(rng, 3, 4)
    p.b.data[:] = rng.standard_normal(12)
    for _ in range(20):
        x, h = rng.standard_normal(3), rng.standard_normal(4)
        out = L.gru_cell(Tensor(x), Tensor(h), p).data
        ref, n, _ = gru_oracle(x, h, p.w_ih.data, p.w_hh.data, p.b.data)
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-14)
        lo, hi = np.minimum(h, n), np.maximum(h, n)
        assert ((out >= lo - 1e-15) & (out <= hi + 1e-15)).all()


def test_gru_zero_and_carry_through(rng):
    z = L.GruParams(*(tn.parameter(np.zeros(s)) for s in ((12, 3), (12, 4), (12,))))
    np.testing.assert_array_equal(L.gru_cell(Tensor(rng.standard_normal(3)), Tensor(np.zeros(4)), z).data, 0.0)
    p = L.init_gru(rng, 3, 4)
    p.b.data[4:8] = -50.0  # update gate -> 0
    h = rng.standard_normal(4)
    out = L.gru_cell(Tensor(rng.standard_normal(3)), Tensor(h), p).data
    np.testing.assert_allclose(out, h, rtol=0, atol=1e-6)


def test_gru_gradient(rng):
    p = L.init_gru(rng, 3, 4)
    x, h = tn.parameter(rng.standard_normal(3)), tn.parameter(rng.standard_normal(4))
    w = Tensor(rng.standard_normal(4))
    assert tn.gradcheck(lambda: tn.sum(tn.mul(L.gru_cell(x, h, p), w)), [x, h, *p.tensors().values()]) <= 1e-4


def test_gru_dim_mismatch(rng):
    with pytest.raises(UsageError):
        L.gru_cell(Tensor(np.zeros(2)), Tensor(np.zeros(4)), L.init_gru(rng, 3, 4))


def test_linear_identity_and_rows(rng):
    lin = L.LinearParams(Tensor(np.eye(3)), Tensor(np.zeros(3)))
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(L.linear(Tensor(x), lin).data, x)
    lin = L.init_linear(rng, 3, 2)
    X = rng.standard_normal((4, 3))
    np.testing.assert_allclose(L.linear(Tensor(X), lin).data, X @ lin.weight.data.T + lin.bias.data, atol=1e-15)


def test_embed_lookup_and_errors(rng):
    table = L.init_embedding(rng, 6, 3)
    np.testing.assert_array_equal(table.weight.data[L.PAD], 0.0)
    np.testing.assert_array_equal(L.embed([4], table).data, table.weight.data[[4]])
    np.testing.assert_array_equal(L.embed(4, table).data, table.weight.data[4])
    with pytest.raises(DataError):
        L.embed([6], table)


def test_embed_pad_row_gets_no_gradient_and_multiplicity(rng):
    table = L.init_embedding(rng, 6, 3)
    w = Tensor(rng.standard_normal(3))
    tn.backward(tn.sum(tn.mul(L.embed(5, table), w)))
    single = table.weight.grad[5].copy()
    table.weight.zero_grad()
    tn.backward(tn.sum(tn.mul(tn.sum(L.embed([5, 0, 5], table), axis=0), w)))
    np.testing.assert_array_equal(table.weight.grad[5], 2 * single)
    np.testing.assert_array_equal(table.weight.grad[L.PAD], 0.0)


def test_load_pretrained(tmp_path, rng):
    vocab = Vocabulary(["cat", "dog"])
    table = L.init_embedding(rng, len(vocab), 2)
    before = table.weight.data.copy()
    path = tmp_path / "vec.txt"
    path.write_text("cat 0.5 -1.0\nbird 1 1\n<pad> 9 9\n", encoding="utf-8")
    assert L.load_pretrained(str(path), vocab, table) == 1
    np.testing.assert_array_equal(table.weight.data[vocab.lookup("cat")], [0.5, -1.0])
    np.testing.assert_array_equal(table.weight.data[vocab.lookup("dog")], before[vocab.lookup("dog")])
    np.testing.assert_array_equal(table.weight.data[L.PAD], 0.0)
    path.write_text("cat 0.5\n", encoding="utf-8")
    with pytest.raises(DataError, match=":1:"):
        L.load_pretrained(str(path), vocab, table)
