"""PNG round trip for image tensors.

Mapping contract: [-1, 1] -> [0, 255] by affine transform with
round-half-even (numpy rint), 8-bit RGB.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

__all__ = ["image_to_uint8", "uint8_to_image", "save_png", "load_png"]


def image_to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3,H,W) tensor in [-1,1] -> (H,W,3) uint8."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {tuple(img.shape)}")
    arr = img.detach().to(torch.float64).clamp(-1, 1).numpy()
    scaled = np.rint((arr + 1.0) / 2.0 * 255.0)
    return scaled.clip(0, 255).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_image(arr: np.ndarray) -> torch.Tensor:
    """(H,W,3) uint8 -> (3,H,W) float32 in [-1,1]."""
    t = torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1))
    return t / 255.0 * 2.0 - 1.0


def save_png(img: torch.Tensor, path: str | Path) -> None:
    Image.fromarray(image_to_uint8(img)).save(Path(path), format="PNG")


def load_png(path: str | Path) -> torch.Tensor:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"))
    return uint8_to_image(arr)
