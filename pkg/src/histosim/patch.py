"""In-memory raster patches with channel semantics.

A :class:`Patch` wraps a read-only float64 array of shape (H, W, C) with all
values in [0, 1]. C is 1 for GRAY/HEMATOXYLIN patches and 3 for RGB.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ImageIOError


class Colorspace(Enum):
    RGB = "rgb"
    GRAY = "gray"
    HEMATOXYLIN = "hematoxylin"


@dataclass(frozen=True)
class Patch:
    """Immutable image patch; values in [0, 1], row-major (H, W, C)."""

    data: np.ndarray = field(repr=False)
    colorspace: Colorspace

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"patch must be (H, W, 1|3), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("patch must be non-empty")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("patch values must lie in [0, 1]")
        want_c = 3 if self.colorspace is Colorspace.RGB else 1
        if arr.shape[2] != want_c:
            raise ValueError(
                f"{self.colorspace.value} patch needs {want_c} channel(s), got {arr.shape[2]}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, colorspace: Colorspace | None = None) -> "Patch":
        return Patch(data, colorspace if colorspace is not None else self.colorspace)


def from_array(arr: np.ndarray, colorspace: Colorspace = Colorspace.RGB) -> Patch:
    return Patch(arr, colorspace)


def load_image(path: str | Path) -> Patch:
    """Decode a PNG/TIFF file into an RGB patch.

    8-bit samples are divided by 255, 16-bit by 65535. Grayscale files are
    replicated to three channels so the preprocessing pipeline always starts
    from RGB; alpha channels are dropped.
    """
    from PIL import Image

    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                if im.mode not in ("RGB", "L"):
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise ImageIOError(f"image file not found: {path}")
    except OSError as exc:
        raise ImageIOError(f"cannot decode image {path}: {exc}")
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return Patch(arr, Colorspace.RGB)


def save_image(patch: Patch, path: str | Path) -> None:
    """Write a patch as an 8-bit PNG (round(v * 255))."""
    from PIL import Image

    arr = np.round(patch.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        im = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        im = Image.fromarray(arr, mode="RGB")
    im.save(Path(path))
