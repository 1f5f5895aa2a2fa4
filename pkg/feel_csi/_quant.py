"""
Weights-only affine quantization of models and model updates, exact payload
accounting and the FEELQP01 wire format.

Weight tensors are quantized per tensor with a min/max range sent as two
32-bit floats; bias and other tensors travel as raw 32-bit floats.
"""

import math
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from ._binary_io import BinaryReader, role_code
from ._constants import BASELINE_BITS, PAYLOAD_MAGIC, RANGE_METADATA_BITS
from ._exceptions import (
    ConfigError,
    FormatError,
    ShapeMismatchError,
    TemplateMismatchError,
    UndefinedInputError,
)
from ._models import ParamRole
from ._nn import ParamSet, unflatten

_ROLES = {0: ParamRole.WEIGHT, 1: ParamRole.BIAS, 2: ParamRole.OTHER}


@dataclass
class QuantRecord:
    """One tensor on the wire: packed codes with a range, or raw 32-bit values"""

    name: str
    role: ParamRole
    shape: Tuple[int, ...]
    bit_width: int = 0
    min_value: float = 0.0
    max_value: float = 0.0
    codes: bytes = b""
    raw: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def quantized(self) -> bool:
        return self.raw is None

    @property
    def bits(self) -> int:
        if self.quantized:
            return RANGE_METADATA_BITS + self.size * self.bit_width
        return BASELINE_BITS * self.size

    def step(self) -> float:
        return quant_step(self.min_value, self.max_value, self.bit_width)


@dataclass
class QuantPayload:
    records: List[QuantRecord]

    @property
    def total_bits(self) -> int:
        return sum(r.bits for r in self.records)

    @property
    def num_elements(self) -> int:
        return sum(r.size for r in self.records)


def quant_step(min_value: float, max_value: float, bits: int) -> float:
    """(max - min) / (2^bits - 1), or 1 for a zero range"""
    span = float(max_value) - float(min_value)
    return span / (2**bits - 1) if span > 0 else 1.0


def _float32_floor(x: float) -> np.float32:
    f = np.float32(x)
    if float(f) > x:
        f = np.nextafter(f, np.float32(-np.inf))
    return f


def _float32_ceil(x: float) -> np.float32:
    f = np.float32(x)
    if float(f) < x:
        f = np.nextafter(f, np.float32(np.inf))
    return f


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """Concatenate ``bits``-wide codes LSB first, zero-padded to a whole byte"""
    shifts = np.arange(bits, dtype=np.uint64)
    planes = ((codes.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(planes.ravel(), bitorder="little").tobytes()


def unpack_codes(data: bytes, count: int, bits: int) -> np.ndarray:
    expected = math.ceil(count * bits / 8)
    if len(data) != expected:
        raise FormatError(f"code stream of {len(data)} bytes, expected {expected}")
    planes = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count * bits, bitorder="little")
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (planes.reshape(count, bits).astype(np.uint64) * weights).sum(axis=1)


def _quantize_tensor(
    values: np.ndarray,
    bits: int,
    stochastic: bool,
    rng: Optional[np.random.Generator],
) -> Tuple[float, float, bytes]:
    """(min, max, packed codes) of one weight tensor.

    The range is rounded outward to float32 so it covers every value. A
    constant tensor keeps its value as both ends of the range with all codes
    zero, which makes its round trip exact; the FEELQP01 encoding still
    narrows that value to float32.
    """
    flat = values.ravel()
    levels = 2**bits - 1
    if flat.size == 0 or flat.min() == flat.max():
        value = float(flat[0]) if flat.size else 0.0
        return value, value, pack_codes(np.zeros(flat.size, dtype=np.uint64), bits)
    lo = _float32_floor(float(flat.min()))
    hi = _float32_ceil(float(flat.max()))
    step = quant_step(lo, hi, bits)
    scaled = (flat - float(lo)) / step
    if stochastic:
        codes = np.floor(scaled + rng.random(flat.size))
    else:
        codes = np.rint(scaled)
    codes = np.clip(codes, 0, levels)
    return float(lo), float(hi), pack_codes(codes, bits)


def quantize(
    tensors: Union[ParamSet, np.ndarray],
    bits: int,
    template: Optional[ParamSet] = None,
    stochastic_rounding: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> QuantPayload:
    """Quantize weight tensors of a ParamSet (or a flat vector laid out like ``template``)"""
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= 32:
        raise ConfigError(f"bits must be an integer in [1, 32], got {bits}")
    if stochastic_rounding and rng is None:
        raise ConfigError("Stochastic rounding needs an rng")
    if isinstance(tensors, ParamSet):
        ps = tensors
    else:
        if template is None:
            raise ShapeMismatchError("A flat vector needs a ParamSet template")
        ps = unflatten(tensors, template)

    records = []
    for entry in ps:
        if not np.all(np.isfinite(entry.value)):
            raise UndefinedInputError(f"Tensor '{entry.name}' contains non-finite values")
        shape = tuple(entry.value.shape)
        if entry.role == ParamRole.WEIGHT:
            lo, hi, codes = _quantize_tensor(entry.value, int(bits), stochastic_rounding, rng)
            records.append(QuantRecord(entry.name, entry.role, shape, int(bits), lo, hi, codes))
        else:
            raw = entry.value.astype(np.float32).ravel()
            records.append(QuantRecord(entry.name, entry.role, shape, raw=raw))
    return QuantPayload(records)


def dequantize(qp: QuantPayload, template: ParamSet) -> np.ndarray:
    """Flat float64 vector in template order; the top code maps exactly to max"""
    if len(qp.records) != len(template):
        raise TemplateMismatchError(
            f"Payload has {len(qp.records)} records, template has {len(template)} entries"
        )
    parts = []
    for record, entry in zip(qp.records, template):
        if (record.name, record.shape, record.role) != (
            entry.name,
            tuple(entry.value.shape),
            entry.role,
        ):
            raise TemplateMismatchError(
                f"Record '{record.name}' {record.shape} does not match "
                f"'{entry.name}' {tuple(entry.value.shape)}"
            )
        if not record.quantized:
            parts.append(record.raw.astype(np.float64))
            continue
        codes = unpack_codes(record.codes, record.size, record.bit_width)
        levels = 2**record.bit_width - 1
        values = record.min_value + codes.astype(np.float64) * record.step()
        values[codes == levels] = record.max_value
        parts.append(values)
    return np.concatenate(parts) if parts else np.zeros(0)


def payload_bits(qp: QuantPayload) -> int:
    """Exact size: range metadata plus codes for weights, 32 bits per raw element"""
    return qp.total_bits


def full_precision_bits(template: ParamSet) -> int:
    """Size of the unquantized 32-bit transfer of every tensor"""
    return BASELINE_BITS * template.num_elements()


def overhead_ratio(qp: QuantPayload, baseline_bits: int = BASELINE_BITS) -> float:
    """How many times smaller the payload is than a ``baseline_bits`` transfer"""
    return baseline_bits * qp.num_elements / qp.total_bits


def transport(
    vector: np.ndarray,
    template: ParamSet,
    bits: Optional[int],
    stochastic_rounding: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, int]:
    """Send a flat vector through the codec; returns (received vector, bits on the wire).

    ``bits=None`` sends the vector unquantized and counts it at 32 bits per element.
    """
    if bits is None:
        return np.array(vector, dtype=np.float64), full_precision_bits(template)
    qp = quantize(vector, bits, template, stochastic_rounding, rng)
    return dequantize(qp, template), payload_bits(qp)


# ---------------------------------------------------------------- wire format


def encode_payload(qp: QuantPayload) -> bytes:
    parts = [PAYLOAD_MAGIC, struct.pack("<I", len(qp.records))]
    for r in qp.records:
        name = r.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<BBB", role_code(r.role), r.bit_width, len(r.shape)))
        parts.append(struct.pack(f"<{len(r.shape)}I", *r.shape))
        if r.quantized:
            parts.append(struct.pack("<2f", r.min_value, r.max_value))
            parts.append(r.codes)
        else:
            parts.append(r.raw.astype("<f4").tobytes())
    return b"".join(parts)


def decode_payload(data: bytes, path: Optional[str] = None) -> QuantPayload:
    reader = BinaryReader(data, path)
    reader.expect_magic(PAYLOAD_MAGIC)
    (count,) = reader.unpack("<I", "record count")
    records = []
    for _ in range(count):
        start = reader.offset
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            reader.fail("record name is not valid UTF-8", offset=start + 2)
        role_byte, bit_width, rank = reader.unpack("<BBB", "record header")
        role = _ROLES.get(role_byte)
        if role is None:
            reader.fail(f"unknown role byte {role_byte}", offset=reader.offset - 3)
        shape = tuple(reader.unpack(f"<{rank}I", "shape"))
        size = int(np.prod(shape)) if shape else 1
        if role == ParamRole.WEIGHT:
            if not 1 <= bit_width <= 32:
                reader.fail(f"bit width {bit_width} out of range for '{name}'")
            lo, hi = reader.unpack("<2f", "range")
            codes = reader.take(math.ceil(size * bit_width / 8), f"codes of '{name}'")
            records.append(QuantRecord(name, role, shape, bit_width, float(lo), float(hi), codes))
        else:
            raw = reader.array("<f4", size, f"values of '{name}'").astype(np.float32)
            records.append(QuantRecord(name, role, shape, raw=raw))
    reader.expect_end()
    return QuantPayload(records)
