"""Checkpoint files and the local artifact store."""
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.model.params import ArchSpec, init_params
from src.storage import checkpoint, files
from src.utils.errors import CheckpointError
from tests.helpers.factories import tiny_params, tiny_run_config


def test_save_load_is_exact(tmp_path: Path, rng: np.random.Generator) -> None:
    named = {
        "a.weight": rng.normal(size=(2, 3, 3, 3)) * 1e-7,
        "a.bias": np.array([1.0 / 3.0, -2.5e300, 0.0]),
        "b": np.array(np.pi),
    }
    path = checkpoint.save(tmp_path / "ckpt.json", named, {"num_stages": "2"})
    arrays, meta = checkpoint.load(path)
    assert list(arrays) == list(named)
    for name, value in named.items():
        assert arrays[name].shape == value.shape
        assert_array_equal(arrays[name], value)
    assert meta == {"num_stages": "2"}


def test_same_tensors_give_same_bytes(tiny_config) -> None:
    first = checkpoint.dump_bytes(tiny_params(tiny_config).named_parameters(), {"seed": "0"})
    second = checkpoint.dump_bytes(tiny_params(tiny_config).named_parameters(), {"seed": "0"})
    assert first == second


def test_params_round_trip_through_checkpoint(tmp_path: Path, tiny_config) -> None:
    params = tiny_params(tiny_config)
    checkpoint.save(tmp_path / "ckpt.json", params.named_parameters())
    arrays, _ = checkpoint.load(tmp_path / "ckpt.json")
    other = tiny_params(tiny_config, seed=99)
    other.load_state_dict(arrays)
    for name, value in params.state_dict().items():
        assert_array_equal(other.state_dict()[name], value)


def test_layout_lists_format_version_and_tensors() -> None:
    doc = json.loads(checkpoint.dump_bytes({"w": np.ones((1, 2))}))
    assert list(doc) == ["format", "version", "meta", "tensors"]
    assert doc["format"] == "cascade-checkpoint"
    assert doc["tensors"] == [{"name": "w", "shape": [1, 2], "values": [1.0, 1.0]}]


def test_architecture_mismatch_is_rejected(tiny_config) -> None:
    two_stage = tiny_params(tiny_config)
    one_stage = init_params(ArchSpec.from_config(tiny_run_config(num_stages=1)), 0)
    with pytest.raises(CheckpointError, match="architecture mismatch"):
        one_stage.load_state_dict(two_stage.state_dict())
    with pytest.raises(CheckpointError, match="architecture mismatch"):
        two_stage.load_state_dict(one_stage.state_dict())


def test_shape_mismatch_is_rejected(tiny_config) -> None:
    params = tiny_params(tiny_config)
    arrays = params.state_dict()
    name = next(iter(arrays))
    arrays[name] = np.zeros(arrays[name].shape + (1,))
    with pytest.raises(CheckpointError, match=name):
        params.load_state_dict(arrays)


def test_unsupported_version_is_rejected() -> None:
    doc = json.loads(checkpoint.dump_bytes({"w": np.ones(1)}))
    doc["version"] = 2
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load_bytes(json.dumps(doc).encode())


def test_size_mismatch_inside_file_is_rejected() -> None:
    doc = {"format": "cascade-checkpoint", "version": 1, "meta": {}, "tensors": [{"name": "w", "shape": [3], "values": [1.0]}]}
    with pytest.raises(CheckpointError):
        checkpoint.load_bytes(json.dumps(doc).encode())


def test_garbage_and_missing_files_are_checkpoint_errors(tmp_path: Path) -> None:
    with pytest.raises(CheckpointError):
        checkpoint.load_bytes(b"not json")
    with pytest.raises(CheckpointError, match="not found"):
        checkpoint.load(tmp_path / "missing.json")


def test_write_bytes_leaves_no_temp_file(tmp_path: Path) -> None:
    target = tmp_path / "nested" / "out.bin"
    files.write_bytes(target, b"one")
    files.write_bytes(target, b"two")
    assert files.read_bytes(target) == b"two"
    assert sorted(p.name for p in target.parent.iterdir()) == ["out.bin"]


def test_csv_bytes_uses_newline_endings() -> None:
    assert files.csv_bytes(["a", "b"], [[1, 0.5], ["x", ""]]) == b"a,b\n1,0.5\nx,\n"


def test_load_reads_through_artifact_store(tmp_path: Path) -> None:
    path = tmp_path / "ck.json"
    files.write_bytes(path, checkpoint.dump_bytes({"w": np.arange(3.0)}, {"seed": "4"}))
    arrays, meta = checkpoint.load(path)
    assert_array_equal(arrays["w"], [0.0, 1.0, 2.0])
    assert meta == {"seed": "4"}
    # a directory in place of the file is reported as missing, not as an OS error
    (tmp_path / "dir.json").mkdir()
    with pytest.raises(CheckpointError, match="not found"):
        checkpoint.load(tmp_path / "dir.json")
