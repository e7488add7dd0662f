import numpy as np
import pytest

from recaccel.attention import AttentionConfig
from recaccel.data import generate_synthetic
from recaccel.model import ModelSpec, build_model
from recaccel.train import fit_loop


def tiny_spec(n_items=30, d_e=4, h=6, depth=2, m=5, seq_len=4, n_heads=2, attn_layers=1, **kw):
    att = None
    if attn_layers:
        att = AttentionConfig(seq_len=seq_len, d_model=d_e, n_heads=n_heads, n_layers=attn_layers, **kw)
    return ModelSpec(n_items=n_items, d_e=d_e, h=h, depth=depth, m=m, attention=att)


def tiny_batch(spec, n=4, seed=0):
    rng = np.random.default_rng(seed)
    L = spec.attention.seq_len if spec.attention else 4
    seq = rng.integers(0, spec.n_items, size=(n, L))
    cands = rng.integers(0, spec.n_items, size=(n, spec.m))
    pos = rng.integers(0, spec.m, size=n)
    return seq, cands, pos


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(users=60, items=200, events_per_user=6, m=20, seq_len=8, seed=3)


@pytest.fixture(scope="session")
def small_trained(small_data):
    spec = ModelSpec(n_items=200, d_e=8, h=16, depth=2, m=20,
                     attention=AttentionConfig(seq_len=8, d_model=8, n_heads=2))
    model = build_model(spec, seed=0)
    tr = small_data.train()
    fit_loop(model, tr.seq, tr.cands, tr.pos, epochs=3, lr=0.01, seed=0)
    return model
