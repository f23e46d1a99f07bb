"""Minimal ONNX graph loader and numpy executor.

Reads the protobuf wire format directly, with no protobuf dependency,
for the message subset serialized convolutional backbones use, and
evaluates graphs with numpy kernels. The supported operator set covers
what the companion export tool emits (plain convolutional topologies
with residual adds and a pooled head): Conv, BatchNormalization, Relu,
MaxPool, GlobalAveragePool, Add, Sub, Mul, Div, Flatten, Reshape,
Gemm, Identity, Constant.

Everything outside that subset fails loudly at load time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cervix_cad.errors import DataError

# Protobuf wire types.
_VARINT, _I64, _LEN, _I32 = 0, 1, 2, 5

# TensorProto.DataType codes.
_DTYPES = {
    1: np.float32,
    2: np.uint8,
    3: np.int8,
    6: np.int32,
    7: np.int64,
    9: np.bool_,
    11: np.float64,
}


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise DataError("truncated varint in graph file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise DataError("varint overflow in graph file")


def _signed(value: int) -> int:
    """Interpret a varint as two's-complement int64."""
    return value - (1 << 64) if value >= (1 << 63) else value


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) triples of one message.

    Varint values come through as ints, everything else as raw bytes.
    """
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        number, wire = key >> 3, key & 7
        if wire == _VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _I64:
            value, pos = buf[pos : pos + 8], pos + 8
        elif wire == _LEN:
            length, pos = _read_varint(buf, pos)
            value, pos = buf[pos : pos + length], pos + length
            if len(value) != length:
                raise DataError("truncated length-delimited field in graph file")
        elif wire == _I32:
            value, pos = buf[pos : pos + 4], pos + 4
        else:
            raise DataError(f"unsupported wire type {wire} in graph file")
        yield number, wire, value


def _packed_varints(data: bytes) -> list[int]:
    out = []
    pos = 0
    while pos < len(data):
        value, pos = _read_varint(data, pos)
        out.append(_signed(value))
    return out


@dataclass
class TensorInfo:
    """Declared name and static shape of a graph input or output."""

    name: str
    shape: tuple[int | None, ...] = ()


@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)
    name: str = ""


def _parse_tensor(data: bytes) -> tuple[str, np.ndarray]:
    """TensorProto: dims(1) type(2) float_data(4) int64_data(7) name(8) raw(9)."""
    dims: list[int] = []
    dtype_code = 1
    name = ""
    raw = None
    values: list = []
    for number, wire, value in _fields(data):
        if number == 1:
            dims.extend(_packed_varints(value) if wire == _LEN else [_signed(value)])
        elif number == 2:
            dtype_code = value
        elif number == 4:
            values.extend(np.frombuffer(value, "<f4"))
        elif number == 7:
            values.extend(_packed_varints(value) if wire == _LEN else [_signed(value)])
        elif number == 8:
            name = value.decode("utf-8")
        elif number == 9:
            raw = value
    if dtype_code not in _DTYPES:
        raise DataError(f"tensor {name!r} has unsupported data type {dtype_code}")
    dtype = np.dtype(_DTYPES[dtype_code]).newbyteorder("<")
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype)
    else:
        arr = np.array(values, dtype=dtype)
    try:
        arr = arr.reshape(dims).astype(_DTYPES[dtype_code])
    except ValueError as exc:
        raise DataError(f"tensor {name!r}: {exc}") from exc
    return name, arr


def _parse_attribute(data: bytes) -> tuple[str, object]:
    """AttributeProto: name(1) f(2) i(3) s(4) t(5) floats(7) ints(8)."""
    name = ""
    value: object = None
    for number, wire, payload in _fields(data):
        if number == 1:
            name = payload.decode("utf-8")
        elif number == 2:
            value = float(np.frombuffer(payload, "<f4")[0])
        elif number == 3:
            value = _signed(payload)
        elif number == 4:
            value = payload  # bytes on purpose; callers decode if needed
        elif number == 5:
            value = _parse_tensor(payload)[1]
        elif number == 7:
            if wire == _LEN:
                value = [float(v) for v in np.frombuffer(payload, "<f4")]
            else:
                prior = value if isinstance(value, list) else []
                value = prior + [float(np.frombuffer(payload, "<f4")[0])]
        elif number == 8:
            if wire == _LEN:
                value = _packed_varints(payload)
            else:
                prior = value if isinstance(value, list) else []
                value = prior + [_signed(payload)]
    return name, value


def _parse_node(data: bytes) -> OnnxNode:
    """NodeProto: input(1) output(2) name(3) op_type(4) attribute(5) domain(7)."""
    node = OnnxNode(op_type="")
    for number, _wire, value in _fields(data):
        if number == 1:
            node.inputs.append(value.decode("utf-8"))
        elif number == 2:
            node.outputs.append(value.decode("utf-8"))
        elif number == 3:
            node.name = value.decode("utf-8")
        elif number == 4:
            node.op_type = value.decode("utf-8")
        elif number == 5:
            attr_name, attr_value = _parse_attribute(value)
            node.attrs[attr_name] = attr_value
        elif number == 7 and value not in (b"", b"ai.onnx"):
            raise DataError(f"node domain {value!r} not supported")
    return node


def _parse_value_info(data: bytes) -> TensorInfo:
    """ValueInfoProto -> TypeProto.tensor_type -> shape dims."""
    info = TensorInfo(name="")
    for number, _wire, value in _fields(data):
        if number == 1:
            info.name = value.decode("utf-8")
        elif number == 2:
            for t_num, _w, t_val in _fields(value):
                if t_num != 1:  # tensor_type
                    continue
                for tt_num, _w2, tt_val in _fields(t_val):
                    if tt_num != 2:  # shape
                        continue
                    dims: list[int | None] = []
                    for s_num, _w3, s_val in _fields(tt_val):
                        if s_num != 1:  # dim
                            continue
                        dim: int | None = None
                        for d_num, _w4, d_val in _fields(s_val):
                            if d_num == 1:
                                dim = _signed(d_val)
                        dims.append(dim)
                    info.shape = tuple(dims)
    return info


class OnnxGraph:
    """A parsed inference graph plus a numpy evaluator for it."""

    def __init__(self):
        self.nodes: list[OnnxNode] = []
        self.initializers: dict[str, np.ndarray] = {}
        self.inputs: list[TensorInfo] = []
        self.outputs: list[TensorInfo] = []
        self.opset: int = 0

    @property
    def input_info(self) -> TensorInfo:
        if len(self.inputs) != 1:
            raise DataError(f"graph declares {len(self.inputs)} inputs, expected 1")
        return self.inputs[0]

    @property
    def output_info(self) -> TensorInfo:
        if len(self.outputs) != 1:
            raise DataError(f"graph declares {len(self.outputs)} outputs, expected 1")
        return self.outputs[0]

    def run(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Evaluate the graph on named input arrays.

        Nodes are assumed topologically sorted, as the format requires.
        """
        env: dict[str, np.ndarray] = dict(self.initializers)
        for info in self.inputs:
            if info.name not in feeds:
                raise DataError(f"missing graph input {info.name!r}")
        env.update(feeds)
        for node in self.nodes:
            kernel = _KERNELS.get(node.op_type)
            if kernel is None:
                raise DataError(f"unsupported op {node.op_type!r}")
            args = []
            for name in node.inputs:
                if name == "":
                    args.append(None)  # optional input slot
                elif name not in env:
                    raise DataError(f"node {node.name!r} reads undefined tensor {name!r}")
                else:
                    args.append(env[name])
            results = kernel(node, args)
            if not isinstance(results, tuple):
                results = (results,)
            for out_name, value in zip(node.outputs, results):
                env[out_name] = value
        return {info.name: env[info.name] for info in self.outputs}


def parse_model(buf: bytes) -> OnnxGraph:
    """Parse serialized model bytes; fail on anything outside the subset."""
    graph = OnnxGraph()
    graph_seen = False
    for number, _wire, value in _fields(buf):
        if number == 7:
            graph_seen = True
            _parse_graph_into(graph, value)
        elif number == 8:
            for o_num, _w, o_val in _fields(value):
                if o_num == 2:
                    graph.opset = max(graph.opset, _signed(o_val))
    if not graph_seen:
        raise DataError("file does not contain an inference graph")
    unsupported = sorted(
        {n.op_type for n in graph.nodes if n.op_type not in _KERNELS}
    )
    if unsupported:
        raise DataError(f"graph uses unsupported ops: {', '.join(unsupported)}")
    return graph


def _parse_graph_into(graph: OnnxGraph, data: bytes) -> None:
    """GraphProto: node(1) initializer(5) input(11) output(12)."""
    raw_inputs: list[TensorInfo] = []
    for number, _wire, value in _fields(data):
        if number == 1:
            graph.nodes.append(_parse_node(value))
        elif number == 5:
            name, arr = _parse_tensor(value)
            graph.initializers[name] = arr
        elif number == 11:
            raw_inputs.append(_parse_value_info(value))
        elif number == 12:
            graph.outputs.append(_parse_value_info(value))
    # Older producers list initializers among the inputs; keep only
    # the true runtime inputs.
    graph.inputs = [i for i in raw_inputs if i.name not in graph.initializers]


def load_graph(path: str | os.PathLike) -> OnnxGraph:
    """Load and parse a serialized graph file."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"graph file not found: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read graph file {path}: {exc}") from exc
    try:
        return parse_model(buf)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot parse graph file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Kernels. Each takes (node, args) and returns the output array(s).


def _attr_ints(node: OnnxNode, key: str, default: list[int]) -> list[int]:
    value = node.attrs.get(key, default)
    return [int(v) for v in value]


def _conv(node: OnnxNode, args):
    x, w = args[0], args[1]
    b = args[2] if len(args) > 2 else None
    auto_pad = node.attrs.get("auto_pad", b"NOTSET")
    if auto_pad not in (b"NOTSET", b""):
        raise DataError(f"Conv auto_pad {auto_pad!r} not supported")
    sh, sw = _attr_ints(node, "strides", [1, 1])
    dh, dw = _attr_ints(node, "dilations", [1, 1])
    pt, pl, pb, pr = _attr_ints(node, "pads", [0, 0, 0, 0])
    group = int(node.attrs.get("group", 1))

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if group == 1:
        out = _conv_plain(xp, w, sh, sw, dh, dw)
    else:
        xs = np.split(xp, group, axis=1)
        ws = np.split(w, group, axis=0)
        out = np.concatenate(
            [_conv_plain(xg, wg, sh, sw, dh, dw) for xg, wg in zip(xs, ws)], axis=1
        )
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out.astype(x.dtype, copy=False)


def _conv_plain(xp, w, sh, sw, dh, dw):
    """Convolution as im2col + one matrix product."""
    m, c, kh, kw = w.shape
    ekh, ekw = (kh - 1) * dh + 1, (kw - 1) * dw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (ekh, ekw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw]
    n, _, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)
    out = cols @ w.reshape(m, -1).T
    return out.transpose(0, 3, 1, 2)


def _maxpool(node: OnnxNode, args):
    (x,) = args
    kh, kw = _attr_ints(node, "kernel_shape", [1, 1])
    sh, sw = _attr_ints(node, "strides", [1, 1])
    pt, pl, pb, pr = _attr_ints(node, "pads", [0, 0, 0, 0])
    if int(node.attrs.get("ceil_mode", 0)) != 0:
        raise DataError("MaxPool ceil_mode not supported")
    xp = np.pad(
        x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf
    )
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw].max(axis=(4, 5)).astype(x.dtype, copy=False)


def _batchnorm(node: OnnxNode, args):
    x, scale, bias, mean, var = args[:5]
    eps = float(node.attrs.get("epsilon", 1e-5))
    gamma = scale / np.sqrt(var + eps)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return (x - mean.reshape(shape)) * gamma.reshape(shape) + bias.reshape(shape)


def _gemm(node: OnnxNode, args):
    a, b = args[0], args[1]
    c = args[2] if len(args) > 2 else None
    alpha = float(node.attrs.get("alpha", 1.0))
    beta = float(node.attrs.get("beta", 1.0))
    if int(node.attrs.get("transA", 0)):
        a = a.T
    if int(node.attrs.get("transB", 0)):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out


def _flatten(node: OnnxNode, args):
    (x,) = args
    axis = int(node.attrs.get("axis", 1))
    lead = int(np.prod(x.shape[:axis])) if axis else 1
    return x.reshape(lead, -1)


def _reshape(node: OnnxNode, args):
    x, shape = args[0], args[1]
    dims = [int(v) for v in np.asarray(shape).ravel()]
    dims = [x.shape[i] if v == 0 else v for i, v in enumerate(dims)]
    return x.reshape(dims)


_KERNELS = {
    "Conv": _conv,
    "MaxPool": _maxpool,
    "BatchNormalization": _batchnorm,
    "Gemm": _gemm,
    "Flatten": _flatten,
    "Reshape": _reshape,
    "Relu": lambda node, args: np.maximum(args[0], 0),
    "GlobalAveragePool": lambda node, args: args[0].mean(axis=(2, 3), keepdims=True),
    "Add": lambda node, args: args[0] + args[1],
    "Sub": lambda node, args: args[0] - args[1],
    "Mul": lambda node, args: args[0] * args[1],
    "Div": lambda node, args: args[0] / args[1],
    "Identity": lambda node, args: args[0],
    "Constant": lambda node, args: node.attrs["value"],
}
