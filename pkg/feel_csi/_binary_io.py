"""
Little-endian binary formats: FEELCSI1 datasets and FEELNN01 checkpoints.
"""

import os
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from ._constants import CHECKPOINT_MAGIC, DATASET_MAGIC, DATASET_VERSION
from ._exceptions import FormatError
from ._models import Domain, NormParams, ParamRole, UeDataset
from ._nn import ParamEntry, ParamSet

PathLike = Union[str, Path]

_ROLE_CODES = {ParamRole.WEIGHT: 0, ParamRole.BIAS: 1, ParamRole.OTHER: 2}
_ROLES_BY_CODE = {code: role for role, code in _ROLE_CODES.items()}
# Non-trainable tensors (batch-norm running statistics) are flagged in bit 7.
_FROZEN_FLAG = 0x80


def role_code(role: ParamRole) -> int:
    return _ROLE_CODES[role]


class BinaryReader:
    """Sequential reader that reports the offset of every format violation"""

    def __init__(self, data: bytes, path: Optional[str] = None):
        self.data = data
        self.path = path
        self.offset = 0

    def fail(self, message: str, offset: Optional[int] = None):
        raise FormatError(message, self.path, self.offset if offset is None else offset)

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            self.fail(f"truncated {what}: need {size} bytes, {len(self.data) - self.offset} left")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(item * count, what), dtype=dtype, count=count)

    def expect_magic(self, magic: bytes):
        found = self.take(len(magic), "magic")
        if found != magic:
            self.fail(f"bad magic {found!r}, expected {magic!r}", offset=0)

    def expect_end(self):
        if self.offset != len(self.data):
            self.fail(f"{len(self.data) - self.offset} trailing bytes")


def read_file(path: PathLike) -> BinaryReader:
    with open(path, "rb") as f:
        return BinaryReader(f.read(), str(path))


def _write_atomic(path: PathLike, payload: bytes):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------- datasets


def _interleave(matrices: np.ndarray) -> bytes:
    out = np.empty(matrices.shape + (2,), dtype="<f4")
    out[..., 0] = matrices.real
    out[..., 1] = matrices.imag
    return out.tobytes()


def encode_dataset(ds: UeDataset) -> bytes:
    nt, nc = ds.shape
    n_train, n_val, n_test = ds.sizes
    header = DATASET_MAGIC + struct.pack(
        "<7I", DATASET_VERSION, ds.ue_id, nt, nc, n_train, n_val, n_test
    )
    norm = struct.pack("<2d", ds.norm_params.offset, ds.norm_params.scale)
    body = b"".join(_interleave(split) for split in (ds.train, ds.val, ds.test))
    return header + norm + body


def write_dataset(ds: UeDataset, path: PathLike):
    _write_atomic(path, encode_dataset(ds))


def decode_dataset(data: bytes, path: Optional[str] = None) -> UeDataset:
    reader = BinaryReader(data, path)
    reader.expect_magic(DATASET_MAGIC)
    version, ue_id, nt, nc, n_train, n_val, n_test = reader.unpack("<7I", "header")
    if version != DATASET_VERSION:
        reader.fail(f"unsupported dataset version {version}", offset=len(DATASET_MAGIC))
    offset, scale = reader.unpack("<2d", "normalization parameters")
    if not scale > 0:
        reader.fail(f"normalization scale must be > 0, got {scale}", offset=reader.offset - 8)

    splits = []
    for name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        raw = reader.array("<f4", count * nt * nc * 2, f"{name} samples")
        pairs = raw.astype(np.float64).reshape(count, nt, nc, 2)
        splits.append(pairs[..., 0] + 1j * pairs[..., 1])
    reader.expect_end()
    return UeDataset(
        ue_id=ue_id,
        train=splits[0],
        val=splits[1],
        test=splits[2],
        norm_params=NormParams(offset=offset, scale=scale),
        domain_tag=Domain.ANGULAR_DELAY,
    )


def read_dataset(path: PathLike) -> UeDataset:
    reader = read_file(path)
    return decode_dataset(reader.data, reader.path)


def read_dataset_header(path: PathLike) -> Dict[str, object]:
    """Header fields of a dataset file without decoding the samples"""
    with open(path, "rb") as f:
        reader = BinaryReader(f.read(len(DATASET_MAGIC) + 28 + 16), str(path))
    reader.expect_magic(DATASET_MAGIC)
    version, ue_id, nt, nc, n_train, n_val, n_test = reader.unpack("<7I", "header")
    offset, scale = reader.unpack("<2d", "normalization parameters")
    return {
        "format": DATASET_MAGIC.decode("ascii"),
        "version": version,
        "ue_id": ue_id,
        "nt": nt,
        "nc": nc,
        "n_train": n_train,
        "n_val": n_val,
        "n_test": n_test,
        "norm_offset": offset,
        "norm_scale": scale,
    }


# ---------------------------------------------------------------- checkpoints


def encode_checkpoint(ps: ParamSet) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(ps))]
    for entry in ps:
        name = entry.name.encode("utf-8")
        flags = role_code(entry.role) | (0 if entry.trainable else _FROZEN_FLAG)
        shape = entry.value.shape
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<BB", flags, len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(entry.value, dtype="<f8").tobytes())
    return b"".join(parts)


def write_checkpoint(ps: ParamSet, path: PathLike):
    _write_atomic(path, encode_checkpoint(ps))


def decode_checkpoint(data: bytes, path: Optional[str] = None) -> ParamSet:
    reader = BinaryReader(data, path)
    reader.expect_magic(CHECKPOINT_MAGIC)
    (count,) = reader.unpack("<I", "entry count")
    ps = ParamSet()
    for _ in range(count):
        start = reader.offset
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            reader.fail("parameter name is not valid UTF-8", offset=start + 2)
        flags, rank = reader.unpack("<BB", "role and rank")
        role = _ROLES_BY_CODE.get(flags & ~_FROZEN_FLAG)
        if role is None:
            reader.fail(f"unknown role byte {flags}", offset=reader.offset - 2)
        shape = reader.unpack(f"<{rank}I", "shape")
        size = int(np.prod(shape)) if shape else 1
        value = reader.array("<f8", size, f"values of '{name}'").astype(np.float64).reshape(shape)
        if name in ps:
            reader.fail(f"duplicate parameter '{name}'", offset=start)
        ps.add(ParamEntry(name, value, role, trainable=not flags & _FROZEN_FLAG))
    reader.expect_end()
    return ps


def read_checkpoint(path: PathLike) -> ParamSet:
    reader = read_file(path)
    return decode_checkpoint(reader.data, reader.path)
