import numpy as np
import pytest

from jman import tensor as tn
from jman.core import ModelConfig
from jman.data import SynthConfig, build_vocab, expand_turns, prepare_turn, synth_generate
from jman.model import JMAN

TINY = dict(d_v=6, d_t=5, d_a=4, d_q=4, d_att=5, d_emb=4, d_dec=6, dropout=0.2)


def tiny_config(**kw) -> ModelConfig:
    args = dict(TINY)
    args.update(kw)
    return ModelConfig(**args)


def synth_turns(videos=3, seed=0, **kw):
    cfg = SynthConfig(sizes={"train": videos}, seed=seed, **kw)
    dialogs, labels = synth_generate(cfg)["train"]
    turns = expand_turns(dialogs, {lab["video_id"]: lab for lab in labels})
    vocab = build_vocab(dialogs)
    return [prepare_turn(t, vocab) for t in turns], vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    return synth_turns()


@pytest.fixture
def tiny_model(tiny_data):
    prepared, vocab = tiny_data
    cfg = tiny_config(steps=2, features="dh,c,s,rgb,flow,aud", rgb_in=5, flow_in=2, aud_in=8)
    return JMAN(cfg, len(vocab))


def rand_param(rng, *shape, scale=1.0):
    return tn.parameter(scale * rng.standard_normal(shape))
