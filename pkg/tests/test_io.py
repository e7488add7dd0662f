import json

import numpy as np
import pytest

from recaccel.compress import PruneSchedule, pipeline_run
from recaccel.exceptions import DomainError
from recaccel.io import load_model, model_checksum, save_model
from recaccel.model import forward_batch


def test_round_trip_compressed_model(tmp_path, small_trained, small_data):
    model, _ = pipeline_run(small_trained, PruneSchedule(0.4, rounds=1, finetune_epochs=0), 8, 0,
                            small_data)
    hpath, bpath = save_model(model, tmp_path / "m")
    back = load_model(hpath)
    assert model_checksum(back) == model_checksum(model)
    assert set(back.masks) == set(model.masks)
    assert back.qparams == model.qparams
    te = small_data.test()
    assert np.array_equal(forward_batch(back, te.seq, te.cands), forward_batch(model, te.seq, te.cands))
    header = json.loads(hpath.read_text())
    assert header["storage_bits"] == 8


def test_corrupt_blob_detected(tmp_path, small_trained):
    hpath, bpath = save_model(small_trained, tmp_path / "m.json")
    raw = bytearray(bpath.read_bytes())
    raw[0] ^= 0xFF
    bpath.write_bytes(bytes(raw))
    with pytest.raises(DomainError):
        load_model(hpath)


def test_checksum_sensitive_to_weights(small_trained):
    other = small_trained.copy()
    other.params["head.b"][0, 0] += 1e-12
    assert model_checksum(other) != model_checksum(small_trained)
