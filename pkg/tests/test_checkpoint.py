import json
from dataclasses import replace

import numpy as np
import pytest

from Gesme import checkpoint
from Gesme.checkpoint import blob_path, manifest_path, pack_arrays, read_bundle, sha256_hex, unpack_arrays
from Gesme.exceptions import ConfigError, CorruptCheckpointError
from Gesme.model import build, build_variant

from .conftest import random_batch


def test_sha256_hex():
    assert sha256_hex(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_round_trip_restores_model(tmp_path, micro_config, micro_roster, rng):
    model = build(micro_config, micro_roster)
    checkpoint.save(model, tmp_path / "gesme", {"epoch": 3})

    restored = checkpoint.load(tmp_path / "gesme")
    assert restored.variant == "gesme"
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(restored.state_dict()[name], value)
    batch = random_batch(micro_roster, 3, rng)
    np.testing.assert_array_equal(restored(batch, "a").numpy(), model(batch, "a").numpy())
    assert checkpoint.load_checkpoint(tmp_path / "gesme").extra == {"epoch": 3}


def test_load_into_existing_model(tmp_path, micro_config, micro_roster):
    source = build(micro_config, micro_roster)
    checkpoint.save(source, tmp_path / "m")
    target = build(micro_config, micro_roster)
    for tensor in target.parameters():
        tensor.data[...] = 0.0
    checkpoint.load(tmp_path / "m", target)
    np.testing.assert_array_equal(target.towers["b"].W.data, source.towers["b"].W.data)


def test_manifest_lists_tensors_in_order(tmp_path, micro_config, micro_roster):
    model = build(micro_config, micro_roster)
    checkpoint.save(model, tmp_path / "m")
    manifest = json.loads(manifest_path(tmp_path / "m").read_text(encoding="utf-8"))
    names = [entry["name"] for entry in manifest["tensors"]]
    assert names == [name for name, _, _ in model.named_parameters()]
    assert manifest["config"]["model"]["n_zones"] == 3
    assert blob_path(tmp_path / "m").stat().st_size == 4 * model.parameter_count()


def test_truncated_blob_rejected(tmp_path, micro_config, micro_roster):
    checkpoint.save(build(micro_config, micro_roster), tmp_path / "m")
    blob = blob_path(tmp_path / "m")
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(CorruptCheckpointError):
        checkpoint.load(tmp_path / "m")


def test_flipped_byte_rejected(tmp_path, micro_config, micro_roster):
    checkpoint.save(build(micro_config, micro_roster), tmp_path / "m")
    blob = blob_path(tmp_path / "m")
    data = bytearray(blob.read_bytes())
    data[0] ^= 0xFF
    blob.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        read_bundle(tmp_path / "m")


def test_missing_files(tmp_path):
    with pytest.raises(CorruptCheckpointError):
        checkpoint.load(tmp_path / "absent")


def test_config_mismatch_rejected(tmp_path, micro_config, micro_roster):
    checkpoint.save(build(micro_config, micro_roster), tmp_path / "m")
    other = build_variant("sesme", micro_config, micro_roster)
    with pytest.raises(ConfigError):
        checkpoint.load(tmp_path / "m", other)
    with pytest.raises(ConfigError):
        checkpoint.load(tmp_path / "m", build(replace(micro_config, gru_hidden=3), micro_roster))


def test_inconsistent_entries_rejected():
    entries, data = pack_arrays([("w", np.ones((2, 3)))])
    entries[0]["count"] = 5
    with pytest.raises(CorruptCheckpointError):
        unpack_arrays(entries, data)
