"""PNG read/write for 8-bit RGB patches (CLI fixtures and batch I/O)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .color import ColorSpace, RgbPatch


def read_png(path: str | Path, space: ColorSpace = ColorSpace.UNSPECIFIED,
             profile_id: str | None = None) -> RgbPatch:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        data = np.asarray(rgb, dtype=np.uint8)
    return RgbPatch(data=data, space=space, profile_id=profile_id)


def write_png(patch: RgbPatch, path: str | Path) -> None:
    Image.fromarray(patch.data, mode="RGB").save(path, format="PNG")
