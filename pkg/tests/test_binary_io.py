"""
Tests for the FEELCSI1 dataset and FEELNN01 checkpoint formats
"""

import struct

import numpy as np
import pytest

from feel_csi import FormatError, build_model, read_checkpoint, read_dataset, write_checkpoint, write_dataset
from feel_csi._binary_io import (
    decode_checkpoint,
    decode_dataset,
    encode_checkpoint,
    encode_dataset,
    read_dataset_header,
)
from feel_csi._constants import CHECKPOINT_MAGIC, DATASET_MAGIC


class TestDatasetFormat:
    def test_round_trip_is_bitwise(self, tiny_datasets, temp_dir):
        ds = tiny_datasets[1]
        path = temp_dir / "ue.feelcsi"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back.ue_id == ds.ue_id
        assert back.norm_params == ds.norm_params
        assert back.domain_tag == ds.domain_tag
        for name in ("train", "val", "test"):
            assert back.split(name).tobytes() == ds.split(name).tobytes()

    def test_layout(self, tiny_datasets):
        ds = tiny_datasets[0]
        data = encode_dataset(ds)
        assert data[:8] == DATASET_MAGIC
        assert struct.unpack("<7I", data[8:36])[1:] == (ds.ue_id, 4, 4, 16, 2, 2)
        assert len(data) == 8 + 28 + 16 + 20 * 4 * 4 * 2 * 4

    def test_header_only(self, tiny_datasets, temp_dir):
        ds = tiny_datasets[2]
        path = temp_dir / "ue.feelcsi"
        write_dataset(ds, path)
        header = read_dataset_header(path)
        assert header["ue_id"] == ds.ue_id
        assert (header["nt"], header["nc"]) == (4, 4)
        assert (header["n_train"], header["n_val"], header["n_test"]) == (16, 2, 2)
        assert header["norm_scale"] == ds.norm_params.scale

    def test_no_temporary_file_left(self, tiny_datasets, temp_dir):
        write_dataset(tiny_datasets[0], temp_dir / "sub" / "ue.feelcsi")
        assert [p.name for p in (temp_dir / "sub").iterdir()] == ["ue.feelcsi"]

    @pytest.mark.edge_case
    def test_bad_magic_reports_path_and_offset_zero(self, tiny_datasets, temp_dir):
        path = temp_dir / "bad.feelcsi"
        path.write_bytes(b"NOTMAGIC" + encode_dataset(tiny_datasets[0])[8:])
        with pytest.raises(FormatError) as excinfo:
            read_dataset(path)
        assert excinfo.value.offset == 0
        assert excinfo.value.path == str(path)
        assert f"{path} at offset 0" in str(excinfo.value)

    @pytest.mark.edge_case
    def test_unsupported_version(self, tiny_datasets):
        data = bytearray(encode_dataset(tiny_datasets[0]))
        data[8:12] = struct.pack("<I", 99)
        with pytest.raises(FormatError, match="version") as excinfo:
            decode_dataset(bytes(data))
        assert excinfo.value.offset == 8

    @pytest.mark.edge_case
    def test_truncated_and_trailing(self, tiny_datasets):
        data = encode_dataset(tiny_datasets[0])
        with pytest.raises(FormatError, match="truncated"):
            decode_dataset(data[:-4])
        with pytest.raises(FormatError, match="trailing"):
            decode_dataset(data + b"\x00\x00")

    @pytest.mark.edge_case
    def test_non_positive_scale(self, tiny_datasets):
        data = bytearray(encode_dataset(tiny_datasets[0]))
        data[44:52] = struct.pack("<d", 0.0)
        with pytest.raises(FormatError, match="scale"):
            decode_dataset(bytes(data))


class TestCheckpointFormat:
    def test_round_trip_is_bitwise(self, tiny_model_cfg, temp_dir):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        path = temp_dir / "model.feelnn"
        write_checkpoint(ps, path)
        back = read_checkpoint(path)
        assert back.bitwise_equal(ps)
        assert back.names() == ps.names()
        assert [e.role for e in back] == [e.role for e in ps]
        assert [e.trainable for e in back] == [e.trainable for e in ps]
        assert not all(e.trainable for e in back)

    def test_layout(self, tiny_model_cfg):
        ps = build_model(tiny_model_cfg, np.random.default_rng(0))
        data = encode_checkpoint(ps)
        assert data[:8] == CHECKPOINT_MAGIC
        assert struct.unpack("<I", data[8:12]) == (len(ps),)

    @pytest.mark.edge_case
    def test_bad_magic(self, tiny_model_cfg):
        data = encode_checkpoint(build_model(tiny_model_cfg, np.random.default_rng(0)))
        with pytest.raises(FormatError) as excinfo:
            decode_checkpoint(DATASET_MAGIC + data[8:], "model.feelnn")
        assert excinfo.value.offset == 0

    @pytest.mark.edge_case
    def test_duplicate_names(self):
        def entry(name):
            raw = name.encode()
            return struct.pack("<H", len(raw)) + raw + struct.pack("<BB", 0, 1) + struct.pack("<I", 1) + struct.pack("<d", 1.0)

        data = CHECKPOINT_MAGIC + struct.pack("<I", 2) + entry("a.weight") + entry("a.weight")
        with pytest.raises(FormatError, match="duplicate"):
            decode_checkpoint(data)

    @pytest.mark.edge_case
    def test_unknown_role(self):
        raw = b"x"
        data = CHECKPOINT_MAGIC + struct.pack("<I", 1) + struct.pack("<H", 1) + raw + struct.pack("<BB", 5, 0) + struct.pack("<d", 0.0)
        with pytest.raises(FormatError, match="role"):
            decode_checkpoint(data)

    @pytest.mark.edge_case
    def test_invalid_utf8_name(self):
        raw = b"\xffx"
        data = CHECKPOINT_MAGIC + struct.pack("<I", 1) + struct.pack("<H", 2) + raw + struct.pack("<BB", 0, 0) + struct.pack("<d", 0.0)
        with pytest.raises(FormatError, match="UTF-8") as excinfo:
            decode_checkpoint(data)
        assert excinfo.value.offset == 14

    @pytest.mark.edge_case
    def test_truncated(self, tiny_model_cfg):
        data = encode_checkpoint(build_model(tiny_model_cfg, np.random.default_rng(0)))
        with pytest.raises(FormatError):
            decode_checkpoint(data[:-1])
        with pytest.raises(FormatError):
            decode_checkpoint(data + b"\x01")
