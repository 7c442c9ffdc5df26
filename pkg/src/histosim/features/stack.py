"""Multi-stage feature maps produced by a frozen extractor."""

from dataclasses import dataclass

import numpy as np

from ..errors import ExtractorError

N_STAGES = 4


@dataclass(frozen=True)
class FeatureStack:
    """Ordered per-stage feature maps, each (C_l, H_l, W_l) float."""

    stages: tuple

    def __post_init__(self):
        stages = tuple(np.asarray(s) for s in self.stages)
        if len(stages) != N_STAGES:
            raise ExtractorError(f"feature stack needs {N_STAGES} stages, got {len(stages)}")
        for s in stages:
            if s.ndim != 3:
                raise ExtractorError(f"stage maps must be (C, H, W), got shape {s.shape}")
        for prev, cur in zip(stages, stages[1:]):
            if cur.shape[1] > prev.shape[1] or cur.shape[2] > prev.shape[2]:
                raise ExtractorError("stage spatial dimensions must be non-increasing")
        object.__setattr__(self, "stages", stages)

    def __iter__(self):
        return iter(self.stages)

    def shapes(self) -> list[tuple[int, int, int]]:
        return [s.shape for s in self.stages]


def check_matching(f1: FeatureStack, f2: FeatureStack) -> None:
    if f1.shapes() != f2.shapes():
        raise ExtractorError(
            f"feature stack shape mismatch: {f1.shapes()} vs {f2.shapes()}"
        )
