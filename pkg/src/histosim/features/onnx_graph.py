"""Numpy executor for the CNN operator subset of ONNX graphs.

Covers what residual-network backbones exported for inference use: Conv,
BatchNormalization, Relu/LeakyRelu/Tanh/Sigmoid, MaxPool, Add, Mul,
GlobalAveragePool, AveragePool, Flatten, Gemm, Identity, Constant.
Unsupported operators raise with the node name so the gap is obvious.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ExtractorError
from .onnx_wire import OnnxGraph


def _pool_view(x: np.ndarray, kernel, strides, dilations=(1, 1)):
    kh, kw = kernel
    sh, sw = strides
    dh, dw = dilations
    eff_h = (kh - 1) * dh + 1
    eff_w = (kw - 1) * dw + 1
    view = sliding_window_view(x, (eff_h, eff_w), axis=(2, 3))
    view = view[:, :, ::sh, ::sw, ::dh, ::dw]
    return view


def _conv(node, x, w, b=None):
    attrs = node.attrs
    group = attrs.get("group", 1)
    strides = attrs.get("strides", [1, 1])
    dilations = attrs.get("dilations", [1, 1])
    pads = attrs.get("pads", [0, 0, 0, 0])
    if attrs.get("auto_pad", "NOTSET") not in ("NOTSET", ""):
        raise ExtractorError(f"node {node.name!r}: auto_pad is not supported")
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    kh, kw = w.shape[2], w.shape[3]
    view = _pool_view(xp, (kh, kw), strides, dilations)
    if group == 1:
        out = np.einsum("nchwij,mcij->nmhw", view, w, optimize=True)
    else:
        cin = x.shape[1] // group
        mout = w.shape[0] // group
        parts = []
        for g in range(group):
            vg = view[:, g * cin : (g + 1) * cin]
            wg = w[g * mout : (g + 1) * mout]
            parts.append(np.einsum("nchwij,mcij->nmhw", vg, wg, optimize=True))
        out = np.concatenate(parts, axis=1)
    if b is not None:
        out = out + b[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def _max_pool(node, x):
    attrs = node.attrs
    kernel = attrs["kernel_shape"]
    strides = attrs.get("strides", [1, 1])
    pads = attrs.get("pads", [0, 0, 0, 0])
    if attrs.get("ceil_mode", 0):
        raise ExtractorError(f"node {node.name!r}: ceil_mode pooling not supported")
    if any(d != 1 for d in attrs.get("dilations", [1, 1])):
        raise ExtractorError(f"node {node.name!r}: dilated pooling not supported")
    pt, pl, pb, pr = pads
    xp = np.pad(
        x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf
    )
    view = _pool_view(xp, kernel, strides)
    return view.max(axis=(4, 5)).astype(x.dtype, copy=False)


def _avg_pool(node, x):
    attrs = node.attrs
    kernel = attrs["kernel_shape"]
    strides = attrs.get("strides", [1, 1])
    pads = attrs.get("pads", [0, 0, 0, 0])
    if attrs.get("ceil_mode", 0):
        raise ExtractorError(f"node {node.name!r}: ceil_mode pooling not supported")
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    view = _pool_view(xp, kernel, strides)
    return view.mean(axis=(4, 5)).astype(x.dtype, copy=False)


def _batch_norm(node, x, scale, bias, mean, var):
    eps = node.attrs.get("epsilon", 1e-5)
    inv = scale / np.sqrt(var + eps)
    return (x - mean[None, :, None, None]) * inv[None, :, None, None] + bias[
        None, :, None, None
    ]


def _gemm(node, a, b, c=None):
    attrs = node.attrs
    alpha = attrs.get("alpha", 1.0)
    beta = attrs.get("beta", 1.0)
    if attrs.get("transA", 0):
        a = a.T
    if attrs.get("transB", 0):
        b = b.T
    out = alpha * (a @ b)
    if c is not None:
        out = out + beta * c
    return out


def _flatten(node, x):
    axis = node.attrs.get("axis", 1)
    lead = int(np.prod(x.shape[:axis])) if axis > 0 else 1
    return x.reshape(lead, -1)


class GraphExecutor:
    """Stateless forward evaluation of a parsed inference graph."""

    def __init__(self, graph: OnnxGraph):
        self.graph = graph
        self._check_ops()

    _SUPPORTED = frozenset(
        {
            "Conv",
            "BatchNormalization",
            "Relu",
            "LeakyRelu",
            "Tanh",
            "Sigmoid",
            "MaxPool",
            "AveragePool",
            "GlobalAveragePool",
            "Add",
            "Mul",
            "Flatten",
            "Gemm",
            "Identity",
            "Constant",
        }
    )

    def _check_ops(self):
        for node in self.graph.nodes:
            if node.op_type not in self._SUPPORTED:
                raise ExtractorError(
                    f"unsupported operator {node.op_type!r} (node {node.name!r}); "
                    f"supported: {sorted(self._SUPPORTED)}"
                )

    def run(self, feeds: dict, outputs: list[str]) -> list[np.ndarray]:
        values = dict(self.graph.initializers)
        values.update(feeds)

        def get(name, node):
            if name not in values:
                raise ExtractorError(
                    f"node {node.name!r} ({node.op_type}) needs value {name!r} "
                    "before it was produced; graph is not topologically sorted"
                )
            return values[name]

        for node in self.graph.nodes:
            ins = [get(n, node) for n in node.inputs if n]
            op = node.op_type
            if op == "Conv":
                out = _conv(node, *ins)
            elif op == "BatchNormalization":
                out = _batch_norm(node, *ins)
            elif op == "Relu":
                out = np.maximum(ins[0], 0)
            elif op == "LeakyRelu":
                alpha = node.attrs.get("alpha", 0.01)
                x = ins[0]
                out = np.where(x >= 0, x, x * np.asarray(alpha, dtype=x.dtype))
            elif op == "Tanh":
                out = np.tanh(ins[0])
            elif op == "Sigmoid":
                out = 1.0 / (1.0 + np.exp(-ins[0]))
            elif op == "MaxPool":
                out = _max_pool(node, ins[0])
            elif op == "AveragePool":
                out = _avg_pool(node, ins[0])
            elif op == "GlobalAveragePool":
                out = ins[0].mean(axis=(2, 3), keepdims=True)
            elif op == "Add":
                out = ins[0] + ins[1]
            elif op == "Mul":
                out = ins[0] * ins[1]
            elif op == "Flatten":
                out = _flatten(node, ins[0])
            elif op == "Gemm":
                out = _gemm(node, *ins)
            elif op == "Identity":
                out = ins[0]
            elif op == "Constant":
                out = node.attrs["value"]
            else:  # pragma: no cover - _check_ops guards this
                raise ExtractorError(f"unsupported operator {op!r}")
            values[node.outputs[0]] = out

        missing = [n for n in outputs if n not in values]
        if missing:
            raise ExtractorError(f"graph did not produce outputs {missing}")
        return [values[n] for n in outputs]
