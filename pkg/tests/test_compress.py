import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recaccel.compress import (
    PruneSchedule, compute_threshold, fake_quant_backward, fake_quant_forward, make_mask,
    pipeline_run, prune_loop, prune_step, qat_train, quantize_model, sparsity,
)
from recaccel.exceptions import ConfigError
from recaccel.io import model_checksum
from recaccel.model import build_model, count_actual_params
from recaccel.quant import QuantParams, in_range, quant_params, quantize_weights

W0 = np.array([[0.1, -0.4], [0.3, -0.2]])


def test_threshold_examples():
    assert compute_threshold([0.1, 0.2, 0.3, 0.4], 0.5) == 0.3
    mags = np.array([0.5, 0.2, 0.9])
    assert compute_threshold(mags, 0.0) == 0.2
    assert make_mask(mags, compute_threshold(mags, 0.0)).all()
    w = np.random.default_rng(0).normal(size=1000)
    theta = compute_threshold(np.abs(w), 0.4)
    assert 0.39 <= np.mean(np.abs(w) < theta) <= 0.40
    with pytest.raises(ConfigError):
        compute_threshold(mags, 1.0)


def test_mask_and_prune_step():
    m = make_mask(W0, 0.3)
    assert np.array_equal(m, [[0, 1], [1, 0]])
    assert make_mask(W0, 0.0).all()
    assert not make_mask(W0, 1.0).any()
    assert np.array_equal(prune_step(W0, np.ones((2, 2))), W0)
    once = prune_step(W0, m)
    assert np.array_equal(once, [[0, -0.4], [0.3, 0]])
    assert np.array_equal(prune_step(once, m), once)


def test_quant_params_examples():
    qp = quant_params(np.array([-1.0, 0.5, 1.0]), 8)
    assert qp.step == pytest.approx(2 / 127)
    assert quant_params(np.array([-1.0, 1.0]), 2).step == 2.0
    qp = quant_params(np.array([0.0, 0.0, 3.0, 5.0]), 8)
    assert (qp.w_min, qp.w_max) == (3.0, 5.0) and qp.step == pytest.approx(2 / 127)
    with pytest.raises(ConfigError):
        quant_params(np.zeros(3), 8)


def test_quantize_examples():
    qp = QuantParams(8, 2 / 127, -1.0, 1.0)
    assert quantize_weights(np.array([0.5]), qp)[0] == pytest.approx(32 * 2 / 127)
    qp2 = QuantParams(2, 2.0, -1.0, 1.0)
    assert quantize_weights(np.array([1.0]), qp2)[0] == 1.0
    assert quantize_weights(np.array([0.0, 0.7]), qp)[0] == 0.0


def test_degenerate_range_single_value():
    qp = quant_params(np.array([0.3, 0.3, 0.0]), 8)
    out = quantize_weights(np.array([0.3, 0.3, 0.0]), qp)
    assert np.array_equal(out, [0.3, 0.3, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 4, 8, 16]))
def test_quantization_error_bound(seed, bits):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(7, 5)) * rng.uniform(0.01, 10)
    W[rng.random(W.shape) < 0.3] = 0.0
    if not W.any():
        W[0, 0] = 1.0
    qp = quant_params(W, bits)
    Q = quantize_weights(W, qp)
    nz = W != 0
    assert np.all(Q[~nz] == 0)
    assert np.all(np.abs(Q[nz] - W[nz]) <= qp.step / 2 + 1e-12)
    assert len(np.unique(Q[nz])) <= 2 ** bits


def test_ste_backward():
    qp = QuantParams(8, 0.1, -1.0, 1.0)
    W = np.array([-2.0, -0.5, 0.0, 0.99, 1.5])
    g = np.ones(5)
    assert np.array_equal(fake_quant_backward(g, W, qp), [0, 1, 1, 1, 0])
    assert np.array_equal(in_range(W, qp), [False, True, True, True, False])
    assert np.allclose(fake_quant_forward(W, qp), quantize_weights(W, qp))


def test_prune_loop_schedule(small_trained, small_data):
    pruned, hist = prune_loop(small_trained, PruneSchedule(0.4, rounds=3, finetune_epochs=1), small_data)
    assert [round(h["sparsity"], 2) for h in hist] == pytest.approx([0.13, 0.27, 0.40], abs=0.011)
    assert sparsity(pruned) == pytest.approx(0.4, abs=0.01)
    assert sparsity(small_trained) == 0.0
    for name, mask in pruned.masks.items():
        assert np.all(pruned.params[name][mask == 0] == 0)


def test_masks_only_grow(small_trained, small_data):
    a, _ = prune_loop(small_trained, PruneSchedule(0.2, rounds=1, finetune_epochs=1), small_data)
    b, _ = prune_loop(a, PruneSchedule(0.4, rounds=1, finetune_epochs=1), small_data)
    for name in a.masks:
        assert np.all(b.masks[name] <= a.masks[name])


def test_zero_schedule_only_finetunes(small_trained, small_data):
    out, hist = prune_loop(small_trained, PruneSchedule(0.0, rounds=1, finetune_epochs=0), small_data)
    assert not out.masks and model_checksum(out) == model_checksum(small_trained)


def test_layer_scope(small_trained, small_data):
    out, _ = prune_loop(small_trained, PruneSchedule(0.5, rounds=1, finetune_epochs=0, scope="layer"),
                        small_data)
    for name in out.tower_names:
        assert np.mean(out.masks[name] == 0) == pytest.approx(0.5, abs=1 / out.params[name].size + 1e-9)


def test_qat_keeps_sparsity_and_quantizes(small_trained, small_data):
    pruned, _ = prune_loop(small_trained, PruneSchedule(0.4, rounds=1, finetune_epochs=0), small_data)
    out, hist = qat_train(pruned, small_data, 8, epochs=1)
    assert sparsity(out) == pytest.approx(sparsity(pruned))
    for name in out.tower_names:
        W, qp = out.params[name], out.qparams[name]
        assert np.array_equal(quantize_weights(W, qp), W)
    assert not out.fake_quant


def test_fine_grid_qat_matches_full_precision(small_trained, small_data):
    from recaccel.train import task_loss
    tr = small_data.train()
    fq = small_trained.copy()
    for name in fq.tower_names:
        fq.qparams[name] = quant_params(fq.params[name], 32)
    fq.fake_quant = True
    assert task_loss(fq, tr.seq, tr.cands, tr.pos) == pytest.approx(
        task_loss(small_trained, tr.seq, tr.cands, tr.pos), rel=1e-6)


def test_pipeline_identity(small_trained, small_data):
    out, rep = pipeline_run(small_trained, PruneSchedule(0.0), 32, 0, small_data)
    assert model_checksum(out) == model_checksum(small_trained)
    assert rep["storage_ratio"] == 1.0 and rep["mac_retention"] == 1.0


def test_pipeline_ratios(small_trained, small_data):
    out, rep = pipeline_run(small_trained, PruneSchedule(0.4, rounds=2, finetune_epochs=1), 8, 1,
                            small_data)
    retained = count_actual_params(out) / count_actual_params(small_trained)
    assert rep["mac_retention"] == pytest.approx(retained)
    assert rep["storage_ratio"] == pytest.approx(retained / 4)
    assert rep["cost_after"]["bits"] == 8
    assert set(rep["quant_params"]) == set(out.tower_names)
    with pytest.raises(ConfigError):
        pipeline_run(small_trained, PruneSchedule(0.4), 4, 0, small_data)


def test_quantize_model_in_place():
    from conftest import tiny_spec
    model = build_model(tiny_spec(), seed=0)
    quantize_model(model, 16)
    assert all(model.qparams[n].bits == 16 for n in model.tower_names)
