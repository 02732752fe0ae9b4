import numpy as np
import pytest

from jman import core
from jman import tensor as tn
from jman.core import AttentionParams, EncodedExample, ModelConfig, StreamAttention
from jman.errors import ParameterError, UsageError
from jman.tensor import Tensor

import oracles
from conftest import tiny_config


def random_example(rng, cfg: ModelConfig, lengths=None) -> EncodedExample:
    lengths = lengths or {}

    def seq(name, d):
        return Tensor(rng.standard_normal((lengths.get(name, int(rng.integers(1, 6))), d)))

    streams = cfg.streams
    return EncodedExample(
        Q0=Tensor(rng.standard_normal(cfg.d_q)),
        D=Tensor(rng.standard_normal(cfg.d_q)),
        R0=seq("rgb", cfg.d_v) if "rgb" in streams else None,
        F0=seq("flow", cfg.d_v) if "flow" in streams else None,
        C0=seq("caption", cfg.d_t) if "caption" in streams else None,
        S0=seq("summary", cfg.d_t) if "summary" in streams else None,
        A0=seq("audio", cfg.d_a) if "audio" in streams else None,
    )


def arrays(params: AttentionParams) -> dict:
    return {k: v.data for k, v in params.tensors().items()}


def setup(seed, features="dh,c,s,rgb,flow,aud", steps=2, lengths=None, **kw):
    rng = np.random.default_rng(seed)
    cfg = tiny_config(features=features, steps=steps, **kw)
    params = core.init_attention(rng, cfg)
    for t in params.tensors().values():  # leave the tiny init scale for generic values
        t.data[...] = rng.standard_normal(t.shape)
    return rng, cfg, params, random_example(rng, cfg, lengths)


# -- config -----------------------------------------------------------------


def test_parse_features_canonical_order_and_errors():
    assert core.parse_features("flow, DH,c") == ("dh", "c", "flow")
    with pytest.raises(ParameterError):
        core.parse_features("c,s")
    with pytest.raises(ParameterError):
        core.parse_features("dh,video")


def test_config_dims_and_validation():
    cfg = ModelConfig()
    assert cfg.streams == ("rgb", "flow", "caption", "summary")
    assert cfg.d_z == 64 + 64 + 32 + 32 and cfg.joint
    full = ModelConfig(features="dh,c,s,rgb,flow,aud")
    assert full.d_z == cfg.d_z + full.d_a
    assert not ModelConfig(features="dh,rgb,flow").joint
    assert ModelConfig(features="dh").d_z == 0
    with pytest.raises(ParameterError):
        ModelConfig(steps=0)
    with pytest.raises(ParameterError):
        ModelConfig(dropout=1.0)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_params_exist_only_for_enabled_groups():
    names = set(core.init_attention(np.random.default_rng(0), tiny_config(features="dh,rgb,aud")).tensors())
    assert {"w_q.visual", "w_q.mono", "rgb.w_x", "audio.p_x"} <= names
    assert not names & {"w_q.textual", "w_T", "w_V", "flow.w_x"}
    joint = set(core.init_attention(np.random.default_rng(0), tiny_config()).tensors())
    assert {"w_T", "w_V", "w_q.visual", "w_q.textual"} <= joint


# -- question self-attention -----------------------------------------------


def test_self_attention_degenerate_and_uniform(rng):
    cfg = tiny_config(d_q=1)
    p = core.init_attention(rng, cfg)
    q = Tensor([2.5])
    q_hat, a = core.self_attend_question(q, p)
    assert a.data.tolist() == [1.0] and q_hat.data.tolist() == [2.5]
    p = core.init_attention(rng, tiny_config())
    p.w_Q.data[...] = 0.0
    _, a = core.self_attend_question(Tensor(rng.standard_normal(4)), p)
    np.testing.assert_array_equal(a.data, np.full(4, 0.25))


def test_self_attention_formula_oracle(rng):
    p = core.init_attention(rng, tiny_config())
    p.w_Q.data[...] = rng.standard_normal((4, 4))
    p.p_Q.data[...] = rng.standard_normal(4)
    q = rng.standard_normal(4)
    q_hat, a = core.self_attend_question(Tensor(q), p)
    ref_a = oracles.softmax(p.p_Q.data * np.tanh(p.w_Q.data @ q))
    np.testing.assert_allclose(a.data, ref_a, rtol=0, atol=1e-12)
    np.testing.assert_allclose(q_hat.data, ref_a * q, rtol=0, atol=1e-12)


# -- stream attention -----------------------------------------------------


def stream_params(rng, d_x=2, d_q=3, d_att=4, d_c=None):
    mk = lambda *s: Tensor(rng.standard_normal(s))  # noqa: E731
    return StreamAttention(mk(d_att, d_x), mk(d_att), mk(d_att, d_q), mk(d_att, d_c) if d_c else None)


def test_attend_single_row_is_identity(rng):
    p = stream_params(rng)
    x = Tensor(rng.standard_normal((1, 2)))
    x_next, a, pooled = core.attend_stream(x, Tensor(rng.standard_normal(3)), p)
    assert a.data.tolist() == [1.0]
    assert np.array_equal(x_next.data, x.data) and np.array_equal(pooled.data, x.data[0])


def test_attend_zero_cross_is_bitwise_mono(rng):
    p = stream_params(rng, d_c=5)
    x, q = Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal(3))
    mono = core.attend_stream(x, q, p)
    crossed = core.attend_stream(x, q, p, Tensor(np.zeros(5)))
    for a, b in zip(mono, crossed):
        assert np.array_equal(a.data, b.data)


def test_attend_formula_oracle_t3_d2(rng):
    p = stream_params(rng, d_c=5)
    X, q, c = rng.standard_normal((3, 2)), rng.standard_normal(3), rng.standard_normal(5)
    x_next, a, pooled = core.attend_stream(Tensor(X), Tensor(q), p, Tensor(c))
    rX, ra, rp = oracles.attend(X, q, p.w_x.data, p.p_x.data, p.w_q.data, p.w_cross.data, c)
    np.testing.assert_allclose(a.data, ra, rtol=0, atol=1e-12)
    np.testing.assert_allclose(x_next.data, rX, rtol=0, atol=1e-12)
    np.testing.assert_allclose(pooled.data, rp, rtol=0, atol=1e-12)


def test_attend_errors(rng):
    p = stream_params(rng)
    with pytest.raises(UsageError):
        core.attend_stream(Tensor(np.zeros((3, 5))), Tensor(np.zeros(3)), p)
    with pytest.raises(UsageError):
        core.attend_stream(Tensor(np.zeros((3, 2))), Tensor(np.zeros(3)), p, Tensor(np.zeros(4)))


# -- reasoning ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_unroll_oracle_two_steps(seed):
    rng, cfg, params, enc = setup(seed)
    z, trace = core.run_reasoning(enc, params, cfg)
    seqs = {s: enc.stream(s).data for s in cfg.streams}
    rz, hist = oracles.unroll(seqs, enc.Q0.data, arrays(params), 2, cfg.d_v, cfg.d_t)
    np.testing.assert_allclose(z.data, rz, rtol=0, atol=1e-12)
    for st, ref in zip(trace, hist):
        np.testing.assert_allclose(st.alpha_q, ref["alpha_q"], rtol=0, atol=1e-12)
        for s in cfg.streams:
            np.testing.assert_allclose(st.alphas[s], ref["alphas"][s], rtol=0, atol=1e-12)


def test_single_step_equals_mono_concat():
    rng, cfg, params, enc = setup(4, steps=1)
    z, _ = core.run_reasoning(enc, params, cfg)
    q_hat, _ = core.self_attend_question(enc.Q0, params)
    parts = []
    for s in cfg.streams:
        sp = params.for_stream(s)
        parts.append(core.attend_stream(enc.stream(s), q_hat, sp._replace(w_cross=None))[2].data)
    assert np.array_equal(z.data, np.concatenate(parts))


def test_trace_structure_and_shape_preservation():
    rng, cfg, params, enc = setup(5, steps=3)
    _, trace = core.run_reasoning(enc, params, cfg)
    assert [st.n for st in trace] == [1, 2, 3]
    for st in trace:
        assert set(st.alphas) == set(cfg.streams)
        for s, a in st.alphas.items():
            assert (a >= 0).all() and abs(a.sum() - 1) <= 1e-10
            assert st.seqs[s].shape == enc.stream(s).shape
        assert st.z.shape == (cfg.d_z,)
    out = core.export_trace(trace)
    assert len(out["steps"]) == 3 and set(out["steps"][0]["streams"]) == set(cfg.streams)


def test_disabling_stream_shrinks_context():
    _, cfg, params, enc = setup(6, features="dh,c,rgb")
    z, _ = core.run_reasoning(enc, params, cfg)
    assert z.shape == (cfg.d_v + cfg.d_t,)


def test_cumulative_product_oracle():
    rng, cfg, params, enc = setup(7, steps=3)
    _, trace = core.run_reasoning(enc, params, cfg)
    for s in cfg.streams:
        cum = np.ones(enc.stream(s).shape[0])
        for st in trace:
            cum = cum * st.alphas[s]
            np.testing.assert_allclose(st.seqs[s].data, enc.stream(s).data * cum[:, None], rtol=1e-13, atol=1e-15)


def test_cross_modal_influence():
    rng, cfg, params, enc = setup(8, steps=2, lengths={"rgb": 4, "caption": 3})
    _, base = core.run_reasoning(enc, params, cfg)
    enc.C0.data[...] += rng.standard_normal(enc.C0.shape)
    _, moved = core.run_reasoning(enc, params, cfg)
    assert np.array_equal(base[0].alphas["rgb"], moved[0].alphas["rgb"])
    assert not np.allclose(base[1].alphas["rgb"], moved[1].alphas["rgb"], rtol=0, atol=1e-12)


def test_time_permutation_equivariance():
    rng, cfg, params, enc = setup(9, steps=2, features="dh,c,s,rgb,flow")
    T = 5
    enc.R0, enc.F0 = Tensor(rng.standard_normal((T, cfg.d_v))), Tensor(rng.standard_normal((T, cfg.d_v)))
    perm = rng.permutation(T)
    _, base = core.run_reasoning(enc, params, cfg)
    enc.R0, enc.F0 = Tensor(enc.R0.data[perm]), Tensor(enc.F0.data[perm])
    _, moved = core.run_reasoning(enc, params, cfg)
    for a, b in zip(base, moved):
        for s in ("rgb", "flow"):
            np.testing.assert_allclose(b.alphas[s], a.alphas[s][perm], rtol=0, atol=1e-13)


def test_state_config_mismatch():
    rng, cfg, params, enc = setup(10)
    state = core.initial_state(enc, cfg)
    del state.seqs["audio"]
    with pytest.raises(UsageError):
        core.reasoning_step(state, params, cfg)


def test_reasoning_gradients_match_finite_differences():
    rng, cfg, params, enc = setup(11, steps=2)
    for t in params.tensors().values():
        t.data[...] *= 0.5
    w = Tensor(rng.standard_normal(cfg.d_z))
    err = tn.gradcheck(lambda: tn.sum(tn.mul(core.run_reasoning(enc, params, cfg)[0], w)), list(params.tensors().values()))
    assert err <= 1e-4
