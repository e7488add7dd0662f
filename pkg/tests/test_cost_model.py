import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recaccel.cost import (
    CostParams, fit_cost_params, flops_formula, memory_footprint, model_storage_bytes,
    param_count_formula, predict_latency, time_call,
)
from recaccel.exceptions import ConfigError, ShapeError
from recaccel.model import (
    ModelSpec, build_model, cost_report, count_actual_macs, count_actual_params, count_bias_params,
    forward, forward_batch, formula_params,
)

from conftest import tiny_batch, tiny_spec


@pytest.mark.parametrize("args, expected", [((16, 64, 3), 9280), ((1, 1, 1), 2), ((16, 128, 3), 34944)])
def test_param_count_formula(args, expected):
    assert param_count_formula(*args) == expected


def test_doubling_h_roughly_quadruples():
    assert param_count_formula(16, 128, 3) / param_count_formula(16, 64, 3) == pytest.approx(3.77, abs=0.01)


@pytest.mark.parametrize("m, expected", [(50, 464000), (1, 9280), (100, 928000)])
def test_flops_formula(m, expected):
    assert flops_formula(m, 16, 64, 3) == expected


def test_formula_domain():
    with pytest.raises(ConfigError):
        param_count_formula(0, 4, 1)
    with pytest.raises(ConfigError):
        flops_formula(0, 16, 64, 3)


def test_predict_latency():
    cp = CostParams(1e-6, 5.0)
    assert predict_latency(cp, 50, 3, 64) == pytest.approx(5.6144, abs=1e-12)
    assert predict_latency(cp, 1, 1, 1) == pytest.approx(5.000001, abs=1e-12)
    with pytest.raises(ConfigError):
        CostParams(0.0, 1.0)


def test_memory_footprint():
    assert memory_footprint(9280, 4, 50, 64, 4) == (37120, 12800)
    assert memory_footprint(9280, 1, 50, 64, 4)[0] == 9280
    assert memory_footprint(0, 4, 1, 1, 4) == (0, 4)


@pytest.mark.parametrize("params, bits, size", [
    (32.0e6, 32, 128.0e6), (32.0e6, 8, 32.0e6), (19.2e6, 32, 76.8e6),
    (19.2e6, 8, 19.2e6), (6.4e6, 16, 12.8e6)])
def test_storage_bytes_table(params, bits, size):
    assert model_storage_bytes(params, bits) == size


def test_storage_bits_domain():
    with pytest.raises(ConfigError):
        model_storage_bytes(10, 4)
    with pytest.raises(ConfigError):
        model_storage_bytes(1.5, 8)


def test_build_model_deterministic_and_counts():
    spec = ModelSpec(n_items=50, d_e=16, h=64, depth=3, m=50)
    a, b = build_model(spec, seed=7), build_model(spec, seed=7)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert count_actual_params(a) == 9280 == formula_params(spec)
    assert count_actual_macs(a) == flops_formula(50, 16, 64, 3)
    assert count_bias_params(a) == 3 * 64 + 1


def test_depth_one_has_two_weight_matrices():
    model = build_model(ModelSpec(n_items=5, d_e=3, h=4, depth=1, m=2))
    assert [model.params[n].shape for n in model.tower_names] == [(3, 4), (4, 1)]


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 20), st.integers(1, 40), st.integers(1, 4))
def test_weight_count_equals_formula(d_e, h, depth):
    model = build_model(ModelSpec(n_items=3, d_e=d_e, h=h, depth=depth, m=2))
    assert count_actual_params(model) == param_count_formula(d_e, h, depth)


def test_forward_shapes_and_zero_network():
    spec = ModelSpec(n_items=50, d_e=16, h=64, depth=3, m=50)
    model = build_model(spec)
    feats = np.random.default_rng(0).normal(size=(50, 16))
    assert forward(model, feats).shape == (50, 1)
    for n in model.tower_names:
        model.params[n][:] = 0.0
    model.params["head.b"][:] = 0.7
    assert np.allclose(forward(model, feats), 0.7)
    with pytest.raises(ShapeError):
        forward(model, feats[:, :3])


def test_masked_equals_manual_zeroing():
    spec = tiny_spec()
    model = build_model(spec, seed=1)
    rng = np.random.default_rng(2)
    manual = model.copy()
    for n in model.tower_names:
        mask = (rng.random(model.params[n].shape) > 0.4).astype(float)
        model.masks[n] = mask
        manual.params[n] = manual.params[n] * mask
    seq, cands, _ = tiny_batch(spec)
    assert np.allclose(forward_batch(model, seq, cands), forward_batch(manual, seq, cands),
                       atol=1e-12, rtol=0)


def test_cost_report_after_masking():
    spec = ModelSpec(n_items=10, d_e=16, h=64, depth=3, m=50)
    model = build_model(spec)
    model.masks["tower.1.W"] = np.zeros((64, 64))
    rep = cost_report(model, CostParams(1e-6, 5.0))
    assert rep.params == 9280
    assert rep.params_retained == 9280 - 4096
    assert rep.flops == 50 * rep.params_retained
    assert rep.storage_bytes == rep.params_retained * 4
    assert rep.latency_ms_predicted == pytest.approx(1e-6 * rep.flops + 5.0)


def test_latency_law_fits_desk_measurements():
    samples = []
    rng = np.random.default_rng(0)
    for m in (64, 256, 1024):
        for h in (64, 128, 256):
            for depth in (1, 3):
                model = build_model(ModelSpec(n_items=4, d_e=16, h=h, depth=depth, m=m), seed=0)
                feats = rng.normal(size=(m, 16))
                ms = time_call(lambda: forward(model, feats), repeats=7)
                samples.append((m * param_count_formula(16, h, depth), ms))
    cp, r2 = fit_cost_params(samples)
    assert r2 >= 0.9, (r2, samples)
    assert cp.alpha > 0
