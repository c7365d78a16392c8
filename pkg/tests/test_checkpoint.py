import struct

import numpy as np
import pytest

from corrbridge.checkpoint import (MAGIC, VERSION, CheckpointFormatError,
                                   load_checkpoint, save_checkpoint)


def _sample(tmp_path, name="ck.cbrg"):
    path = tmp_path / name
    tensors = {
        "weights.a": np.arange(6, dtype=np.float32).reshape(2, 3),
        "weights.b": np.array([1.5, -2.5], dtype=np.float32),
    }
    meta = {"kind": "test", "config": {"dim": 3}, "note": "héllo"}
    save_checkpoint(path, meta, tensors)
    return path, meta, tensors


def test_roundtrip_restores_everything(tmp_path):
    path, meta, tensors = _sample(tmp_path)
    loaded_meta, loaded = load_checkpoint(path)
    assert loaded_meta["kind"] == "test"
    assert loaded_meta["config"] == {"dim": 3}
    assert loaded_meta["note"] == "héllo"
    for name, arr in tensors.items():
        np.testing.assert_array_equal(loaded[name], arr)
        assert loaded[name].dtype == np.float32


def test_save_load_save_is_bit_identical(tmp_path):
    path, meta, tensors = _sample(tmp_path)
    loaded_meta, loaded = load_checkpoint(path)
    loaded_meta.pop("tensor_manifest")
    second = tmp_path / "again.cbrg"
    save_checkpoint(second, loaded_meta, loaded)
    assert path.read_bytes() == second.read_bytes()


def test_wrong_magic_rejected(tmp_path):
    path, _, _ = _sample(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch_rejected(tmp_path):
    path, _, _ = _sample(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", VERSION + 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path, _, _ = _sample(tmp_path)
    raw = path.read_bytes()
    for cut in (len(raw) - 3, len(raw) // 2, 10):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


def test_truncation_at_record_boundary_detected(tmp_path):
    # drop the final whole record: manifest cross-check must catch it
    path = tmp_path / "ck.cbrg"
    a = np.zeros(2, dtype=np.float32)
    b = np.ones(3, dtype=np.float32)
    save_checkpoint(path, {"kind": "t"}, {"a": a, "b": b})
    raw = path.read_bytes()
    record_b = 8 + len(b"b") + 8 + 8 + 4 * 3
    path.write_bytes(raw[:-record_b])
    with pytest.raises(CheckpointFormatError, match="manifest"):
        load_checkpoint(path)


def test_shape_disagreement_rejected(tmp_path):
    path, _, _ = _sample(tmp_path)
    raw = path.read_bytes()
    # corrupt the manifest inside the metadata JSON: claim a different shape
    corrupted = raw.replace(b'"shape": [2, 3]', b'"shape": [3, 2]')
    assert corrupted != raw
    # metadata length is unchanged since the replacement is same-size
    path.write_bytes(corrupted)
    with pytest.raises(CheckpointFormatError, match="shape"):
        load_checkpoint(path)


def test_magic_constant():
    assert MAGIC == b"CBRG"
