"""Self-contained ONNX (de)serialization for CNN inference graphs.

Parses and emits the protobuf wire format directly for the message subset an
inference graph needs (ModelProto, GraphProto, NodeProto, TensorProto,
AttributeProto, ValueInfoProto), so models can be loaded and written without
the onnx package. Field numbers follow onnx.proto; unknown fields are
ignored on read.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ExtractorError

# TensorProto.DataType
DT_FLOAT = 1
DT_INT64 = 7
DT_DOUBLE = 11

_DTYPES = {
    DT_FLOAT: np.dtype("<f4"),
    DT_INT64: np.dtype("<i8"),
    DT_DOUBLE: np.dtype("<f8"),
}

# AttributeProto.AttributeType
ATTR_FLOAT = 1
ATTR_INT = 2
ATTR_STRING = 3
ATTR_TENSOR = 4
ATTR_FLOATS = 6
ATTR_INTS = 7


# ---------------------------------------------------------------------------
# wire primitives
# ---------------------------------------------------------------------------

def _varint(value: int) -> bytes:
    if value < 0:
        value += 1 << 64
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ExtractorError("truncated varint in model file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            break
        shift += 7
        if shift > 70:
            raise ExtractorError("varint too long in model file")
    return result, pos


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= 1 << 63 else value


def _tag(field_no: int, wire: int) -> bytes:
    return _varint((field_no << 3) | wire)


def _len_field(field_no: int, payload: bytes) -> bytes:
    return _tag(field_no, 2) + _varint(len(payload)) + payload


def _int_field(field_no: int, value: int) -> bytes:
    return _tag(field_no, 0) + _varint(value)


def _str_field(field_no: int, value: str) -> bytes:
    return _len_field(field_no, value.encode("utf-8"))


def _float_field(field_no: int, value: float) -> bytes:
    return _tag(field_no, 5) + struct.pack("<f", value)


def parse_fields(buf: bytes) -> dict:
    """Decode a message into {field_number: [value, ...]} preserving order.

    Varint fields decode to int, 32/64-bit fields to raw bytes, and
    length-delimited fields to bytes (caller interprets).
    """
    fields: dict = {}
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        field_no, wire = key >> 3, key & 0x7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
        elif wire == 1:
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == 2:
            size, pos = _read_varint(buf, pos)
            if pos + size > len(buf):
                raise ExtractorError("truncated length-delimited field in model file")
            value, pos = buf[pos : pos + size], pos + size
        elif wire == 5:
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise ExtractorError(f"unsupported wire type {wire} in model file")
        fields.setdefault(field_no, []).append(value)
    return fields


def _first_int(fields: dict, no: int, default: int = 0) -> int:
    return _signed(fields[no][0]) if no in fields else default


def _first_str(fields: dict, no: int, default: str = "") -> str:
    return fields[no][0].decode("utf-8") if no in fields else default


def _repeated_int(fields: dict, no: int) -> list[int]:
    out = []
    for item in fields.get(no, []):
        if isinstance(item, int):
            out.append(_signed(item))
        else:  # packed
            pos = 0
            while pos < len(item):
                value, pos = _read_varint(item, pos)
                out.append(_signed(value))
    return out


# ---------------------------------------------------------------------------
# typed views
# ---------------------------------------------------------------------------

@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxGraph:
    nodes: list[OnnxNode]
    inputs: list[str]
    outputs: list[str]
    initializers: dict  # name -> np.ndarray
    name: str = ""


def _decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    f = parse_fields(buf)
    name = _first_str(f, 8)
    dims = _repeated_int(f, 1)
    data_type = _first_int(f, 2, DT_FLOAT)
    if data_type not in _DTYPES:
        raise ExtractorError(f"tensor {name!r}: unsupported data type {data_type}")
    dtype = _DTYPES[data_type]
    if 9 in f:  # raw_data
        arr = np.frombuffer(f[9][0], dtype=dtype)
    elif data_type == DT_FLOAT and 4 in f:  # packed float_data
        arr = np.frombuffer(b"".join(f[4]), dtype="<f4")
    elif data_type == DT_INT64 and 7 in f:
        arr = np.array(_repeated_int(f, 7), dtype=np.int64)
    elif data_type == DT_DOUBLE and 10 in f:
        arr = np.frombuffer(b"".join(f[10]), dtype="<f8")
    else:
        arr = np.zeros(0, dtype=dtype)
    return name, arr.reshape(dims) if dims else arr


def _decode_attr(buf: bytes) -> tuple[str, object]:
    f = parse_fields(buf)
    name = _first_str(f, 1)
    atype = _first_int(f, 20, 0)
    if atype == ATTR_FLOAT or (atype == 0 and 2 in f):
        return name, struct.unpack("<f", f[2][0])[0]
    if atype == ATTR_INT or (atype == 0 and 3 in f):
        return name, _signed(f[3][0])
    if atype == ATTR_STRING or (atype == 0 and 4 in f):
        return name, f[4][0].decode("utf-8")
    if atype == ATTR_TENSOR or (atype == 0 and 5 in f):
        return name, _decode_tensor(f[5][0])[1]
    if atype == ATTR_FLOATS or (atype == 0 and 7 in f):
        raw = f.get(7, [])
        vals = []
        for item in raw:
            vals.extend(struct.unpack(f"<{len(item) // 4}f", item))
        return name, list(vals)
    if atype == ATTR_INTS or (atype == 0 and 8 in f):
        return name, _repeated_int(f, 8)
    return name, None


def _decode_node(buf: bytes) -> OnnxNode:
    f = parse_fields(buf)
    attrs = dict(_decode_attr(a) for a in f.get(5, []))
    return OnnxNode(
        op_type=_first_str(f, 4),
        inputs=[b.decode("utf-8") for b in f.get(1, [])],
        outputs=[b.decode("utf-8") for b in f.get(2, [])],
        name=_first_str(f, 3),
        attrs=attrs,
    )


def _value_info_name(buf: bytes) -> str:
    return _first_str(parse_fields(buf), 1)


def load_model(data: bytes) -> OnnxGraph:
    """Parse serialized ModelProto bytes into an OnnxGraph."""
    model = parse_fields(data)
    if 7 not in model:
        raise ExtractorError("model file has no graph (not an ONNX model?)")
    g = parse_fields(model[7][0])
    initializers = dict(_decode_tensor(t) for t in g.get(5, []))
    return OnnxGraph(
        nodes=[_decode_node(n) for n in g.get(1, [])],
        inputs=[_value_info_name(v) for v in g.get(11, [])],
        outputs=[_value_info_name(v) for v in g.get(12, [])],
        initializers=initializers,
        name=_first_str(g, 2),
    )


# ---------------------------------------------------------------------------
# writer
# ---------------------------------------------------------------------------

def encode_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        dt = DT_FLOAT
    elif arr.dtype == np.int64:
        dt = DT_INT64
    elif arr.dtype == np.float64:
        dt = DT_DOUBLE
    else:
        raise ExtractorError(f"unsupported tensor dtype {arr.dtype}")
    out = b"".join(_int_field(1, d) for d in arr.shape)
    out += _int_field(2, dt)
    out += _str_field(8, name)
    out += _len_field(9, np.ascontiguousarray(arr).tobytes())
    return out


def _encode_attr(name: str, value) -> bytes:
    out = _str_field(1, name)
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, float):
        out += _float_field(2, value) + _int_field(20, ATTR_FLOAT)
    elif isinstance(value, int):
        out += _int_field(3, value) + _int_field(20, ATTR_INT)
    elif isinstance(value, str):
        out += _str_field(4, value) + _int_field(20, ATTR_STRING)
    elif isinstance(value, np.ndarray):
        out += _len_field(5, encode_tensor("", value)) + _int_field(20, ATTR_TENSOR)
    elif isinstance(value, (list, tuple)) and all(isinstance(v, int) for v in value):
        out += b"".join(_int_field(8, v) for v in value) + _int_field(20, ATTR_INTS)
    elif isinstance(value, (list, tuple)):
        out += b"".join(_tag(7, 5) + struct.pack("<f", v) for v in value)
        out += _int_field(20, ATTR_FLOATS)
    else:
        raise ExtractorError(f"cannot encode attribute {name!r}={value!r}")
    return out


def encode_node(node: OnnxNode) -> bytes:
    out = b"".join(_str_field(1, s) for s in node.inputs)
    out += b"".join(_str_field(2, s) for s in node.outputs)
    if node.name:
        out += _str_field(3, node.name)
    out += _str_field(4, node.op_type)
    out += b"".join(
        _len_field(5, _encode_attr(k, v)) for k, v in sorted(node.attrs.items())
    )
    return out


def _encode_value_info(name: str, shape: tuple | None = None) -> bytes:
    out = _str_field(1, name)
    if shape is not None:
        dims = b"".join(_len_field(1, _int_field(1, d)) for d in shape)
        tensor_type = _int_field(1, DT_FLOAT) + _len_field(2, dims)
        out += _len_field(2, _len_field(1, tensor_type))
    return out


def save_model(
    graph_name: str,
    nodes: list[OnnxNode],
    inputs: dict,
    outputs: list[str],
    initializers: dict,
    opset: int = 13,
) -> bytes:
    """Serialize a graph to ModelProto bytes.

    `inputs` maps input name -> shape tuple (or None for untyped).
    """
    g = b"".join(_len_field(1, encode_node(n)) for n in nodes)
    g += _str_field(2, graph_name)
    g += b"".join(
        _len_field(5, encode_tensor(k, v)) for k, v in initializers.items()
    )
    g += b"".join(_len_field(11, _encode_value_info(k, v)) for k, v in inputs.items())
    g += b"".join(_len_field(12, _encode_value_info(k)) for k in outputs)

    model = _int_field(1, 8)  # ir_version
    model += _str_field(2, "histosim")
    model += _len_field(7, g)
    model += _len_field(8, _str_field(1, "") + _int_field(2, opset))
    return model
