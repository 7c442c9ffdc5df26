"""Frozen feature extractors with a JSON sidecar contract.

A model is an ONNX graph exposing four stage maps as graph outputs, plus a
sidecar JSON naming them::

    {"model_path": "model.onnx", "input_size": 256,
     "stage_names": ["stage1", "stage2", "stage3", "stage4"],
     "mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25]}

Relative model paths resolve against ``HISTOSIM_MODEL_DIR`` when set, else
against the sidecar's directory. A deterministic synthetic extractor (seeded
random convolutions, strides 4/8/16/32) ships with the library so the whole
feature path is exercisable without real pretrained weights; the CLI accepts
it as the model spec ``synthetic[:seed[:channels]]``.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kernels
from ..errors import ExtractorError
from ..patch import Patch
from .onnx_graph import GraphExecutor
from .onnx_wire import OnnxNode, load_model, save_model
from .stack import N_STAGES, FeatureStack

DEFAULT_INPUT_SIZE = 256
SYNTHETIC_MEAN = (0.5, 0.5, 0.5)
SYNTHETIC_STD = (0.25, 0.25, 0.25)


@dataclass(frozen=True)
class ExtractorSpec:
    model_path: str
    stage_names: tuple
    input_size: int = DEFAULT_INPUT_SIZE
    mean: tuple = SYNTHETIC_MEAN
    std: tuple = SYNTHETIC_STD

    def __post_init__(self):
        object.__setattr__(self, "stage_names", tuple(self.stage_names))
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.stage_names) != N_STAGES:
            raise ExtractorError(
                f"spec must name {N_STAGES} stage outputs, got {len(self.stage_names)}"
            )
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ExtractorError("mean/std must each have 3 entries")
        if self.input_size < 32:
            raise ExtractorError("input_size must be at least 32")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExtractorSpec":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ExtractorError(f"extractor spec not found: {path}")
        except json.JSONDecodeError as exc:
            raise ExtractorError(f"extractor spec {path} is not valid JSON: {exc.msg}")
        try:
            spec = cls(
                model_path=str(obj["model_path"]),
                stage_names=tuple(obj["stage_names"]),
                input_size=int(obj.get("input_size", DEFAULT_INPUT_SIZE)),
                mean=tuple(obj.get("mean", SYNTHETIC_MEAN)),
                std=tuple(obj.get("std", SYNTHETIC_STD)),
            )
        except KeyError as exc:
            raise ExtractorError(f"extractor spec {path} missing field {exc}")
        return spec.resolve(path.parent)

    def resolve(self, base_dir: Path) -> "ExtractorSpec":
        """Resolve a relative model path against HISTOSIM_MODEL_DIR or base_dir."""
        p = Path(self.model_path)
        if p.is_absolute():
            return self
        prefix = os.environ.get("HISTOSIM_MODEL_DIR")
        root = Path(prefix) if prefix else base_dir
        return ExtractorSpec(
            model_path=str(root / p),
            stage_names=self.stage_names,
            input_size=self.input_size,
            mean=self.mean,
            std=self.std,
        )

    def to_json(self, path: str | Path, model_path: str | None = None) -> None:
        obj = {
            "model_path": model_path if model_path is not None else self.model_path,
            "input_size": self.input_size,
            "stage_names": list(self.stage_names),
            "mean": list(self.mean),
            "std": list(self.std),
        }
        Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _resize_bilinear(channel: np.ndarray, size: int) -> np.ndarray:
    h, w = channel.shape
    rows = (np.arange(size, dtype=np.float64) + 0.5) * (h / size) - 0.5
    cols = (np.arange(size, dtype=np.float64) + 0.5) * (w / size) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return kernels.bilinear_sample(channel, rr, cc)


class Extractor:
    """Immutable wrapper around a parsed graph; extraction is deterministic."""

    def __init__(self, executor: GraphExecutor, spec: ExtractorSpec):
        graph_outputs = set(executor.graph.outputs)
        missing = [n for n in spec.stage_names if n not in graph_outputs]
        if missing:
            raise ExtractorError(
                f"stage outputs {missing} not exposed by the graph "
                f"(graph outputs: {sorted(graph_outputs)})"
            )
        if len(executor.graph.inputs) != 1:
            raise ExtractorError(
                f"expected a single graph input, got {executor.graph.inputs}"
            )
        self._executor = executor
        self._input_name = executor.graph.inputs[0]
        self.spec = spec

    def extract(self, patch: Patch) -> FeatureStack:
        """Resize/replicate/normalize a patch and return its 4 stage maps."""
        data = patch.data
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        size = self.spec.input_size
        if data.shape[0] != size or data.shape[1] != size:
            data = np.stack(
                [_resize_bilinear(data[:, :, c], size) for c in range(3)], axis=2
            )
        mean = np.asarray(self.spec.mean)
        std = np.asarray(self.spec.std)
        x = ((data - mean) / std).transpose(2, 0, 1)[None].astype(np.float32)
        try:
            stages = self._executor.run(
                {self._input_name: x}, list(self.spec.stage_names)
            )
        except ExtractorError:
            raise
        except Exception as exc:
            raise ExtractorError(f"inference failed: {exc}")
        maps = []
        for name, stage in zip(self.spec.stage_names, stages):
            if stage.ndim != 4 or stage.shape[0] != 1:
                raise ExtractorError(
                    f"stage {name!r} has shape {stage.shape}, expected (1, C, H, W)"
                )
            maps.append(np.ascontiguousarray(stage[0]))
        return FeatureStack(tuple(maps))


def load_extractor(spec: ExtractorSpec) -> Extractor:
    """Load a frozen extractor from an ONNX file per its spec."""
    path = Path(spec.model_path)
    if not path.is_file():
        raise ExtractorError(f"model file not found: {path}")
    graph = load_model(path.read_bytes())
    return Extractor(GraphExecutor(graph), spec)


# ---------------------------------------------------------------------------
# synthetic extractor (test/profile path)
# ---------------------------------------------------------------------------

def _he_init(rng, cout, cin, k):
    fan_in = cin * k * k
    w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / fan_in)
    b = rng.standard_normal(cout) * 0.1
    return w.astype(np.float32), b.astype(np.float32)


def build_synthetic_model(
    channels: int = 4, seed: int = 0, input_size: int = DEFAULT_INPUT_SIZE
) -> tuple[bytes, ExtractorSpec]:
    """Four-stage random CNN with overall strides 4/8/16/32.

    For a 256x256 input the stage shapes are (C,64,64), (2C,32,32),
    (4C,16,16), (8C,8,8). LeakyRelu keeps channels from dying, which
    matters for correlation-based distances.
    """
    rng = np.random.default_rng(seed)
    layers = [
        (3, channels, 7, 4, 3),
        (channels, 2 * channels, 3, 2, 1),
        (2 * channels, 4 * channels, 3, 2, 1),
        (4 * channels, 8 * channels, 3, 2, 1),
    ]
    nodes = []
    initializers = {}
    prev = "input"
    stage_names = []
    for i, (cin, cout, k, stride, pad) in enumerate(layers, start=1):
        w, b = _he_init(rng, cout, cin, k)
        initializers[f"w{i}"] = w
        initializers[f"b{i}"] = b
        nodes.append(
            OnnxNode(
                "Conv",
                [prev, f"w{i}", f"b{i}"],
                [f"conv{i}"],
                name=f"conv{i}",
                attrs={
                    "strides": [stride, stride],
                    "pads": [pad, pad, pad, pad],
                    "kernel_shape": [k, k],
                },
            )
        )
        stage = f"stage{i}"
        nodes.append(
            OnnxNode(
                "LeakyRelu", [f"conv{i}"], [stage], name=f"act{i}", attrs={"alpha": 0.2}
            )
        )
        stage_names.append(stage)
        prev = stage
    data = save_model(
        f"synthetic-extractor-seed{seed}",
        nodes,
        inputs={"input": (1, 3, input_size, input_size)},
        outputs=stage_names,
        initializers=initializers,
    )
    spec = ExtractorSpec(
        model_path=f"synthetic:{seed}:{channels}",
        stage_names=tuple(stage_names),
        input_size=input_size,
        mean=SYNTHETIC_MEAN,
        std=SYNTHETIC_STD,
    )
    return data, spec


def make_synthetic_extractor(
    channels: int = 4, seed: int = 0, input_size: int = DEFAULT_INPUT_SIZE
) -> Extractor:
    data, spec = build_synthetic_model(channels, seed, input_size)
    return Extractor(GraphExecutor(load_model(data)), spec)


def write_synthetic_model(
    out_dir: str | Path,
    channels: int = 4,
    seed: int = 0,
    input_size: int = DEFAULT_INPUT_SIZE,
) -> Path:
    """Write model.onnx + extractor.json into out_dir; returns the sidecar path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data, spec = build_synthetic_model(channels, seed, input_size)
    (out_dir / "model.onnx").write_bytes(data)
    sidecar = out_dir / "extractor.json"
    spec.to_json(sidecar, model_path="model.onnx")
    return sidecar


def open_extractor(model_arg: str | Path) -> Extractor:
    """Resolve a CLI model argument: sidecar path or synthetic[:seed[:channels]]."""
    text = str(model_arg)
    if text == "synthetic" or text.startswith("synthetic:"):
        parts = text.split(":")
        seed = int(parts[1]) if len(parts) > 1 and parts[1] else 0
        channels = int(parts[2]) if len(parts) > 2 and parts[2] else 4
        return make_synthetic_extractor(channels=channels, seed=seed)
    return load_extractor(ExtractorSpec.from_json(text))
