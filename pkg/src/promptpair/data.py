"""Procedural captioned dataset and one-shot reference images.

Everything here is a pure function of (config, seed): 64x64 anti-aliased
vector shapes on flat backgrounds for base pretraining, and deliberately
out-of-grammar reference images (gradient composites, textures) so that
prompt tuning has to learn something the base model does not know.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np
import torch
from PIL import Image, ImageDraw

__all__ = ["Grammar", "CaptionedImage", "generate_dataset", "make_reference"]


COLOR_RGB = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.95, 0.90, 0.10),
    "cyan": (0.10, 0.85, 0.90),
    "magenta": (0.90, 0.15, 0.85),
    "orange": (0.95, 0.55, 0.10),
    "white": (0.95, 0.95, 0.95),
    # background palette
    "black": (0.05, 0.05, 0.05),
    "gray": (0.45, 0.45, 0.45),
    "navy": (0.05, 0.08, 0.30),
    "olive": (0.30, 0.30, 0.08),
}


@dataclass(frozen=True)
class Grammar:
    """Caption template grammar: 'a [size] {color} {shape} on a {bg} background
    [at the {place}]'."""

    shapes: tuple[str, ...] = ("circle", "square", "triangle", "ring", "cross", "diamond")
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow", "cyan", "magenta", "orange", "white")
    backgrounds: tuple[str, ...] = ("black", "gray", "navy", "olive")
    sizes: tuple[str, ...] = ("small", "large")
    places: tuple[str, ...] = ("left", "right", "top", "bottom")
    size_word_prob: float = 0.4
    place_word_prob: float = 0.3
    image_size: int = 64

    def words(self) -> list[str]:
        """Every word a generated caption can contain."""
        fixed = ["a", "on", "background", "at", "the"]
        return sorted(
            set(fixed)
            | set(self.shapes)
            | set(self.colors)
            | set(self.backgrounds)
            | set(self.sizes)
            | set(self.places)
        )


@dataclass
class CaptionedImage:
    image: torch.Tensor  # (3, H, W) in [-1, 1]
    caption: str


def _to_tensor(rgb01: np.ndarray) -> torch.Tensor:
    """HWC float [0,1] -> CHW tensor in [-1,1]."""
    arr = np.clip(rgb01, 0.0, 1.0).astype(np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1)) * 2.0 - 1.0


def _shape_sdf(shape: str, x: np.ndarray, y: np.ndarray, radius: float) -> np.ndarray:
    """Signed distance (negative inside) for the named shape centered at 0."""
    if shape == "circle":
        return np.hypot(x, y) - radius
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) - radius
    if shape == "diamond":
        return (np.abs(x) + np.abs(y)) - 1.3 * radius
    if shape == "ring":
        return np.abs(np.hypot(x, y) - radius) - 0.35 * radius
    if shape == "cross":
        arm = 0.34 * radius
        horiz = np.maximum(np.abs(x) - radius, np.abs(y) - arm)
        vert = np.maximum(np.abs(x) - arm, np.abs(y) - radius)
        return np.minimum(horiz, vert)
    if shape == "triangle":
        # equilateral, apex up; max over three outward edge normals
        d = None
        for ang in (90.0, 210.0, 330.0):
            nx, ny = math.cos(math.radians(ang)), math.sin(math.radians(ang))
            e = nx * x + ny * (-y) - radius * 0.5
            d = e if d is None else np.maximum(d, e)
        return d
    raise ValueError(f"unknown shape {shape!r}")


def render_shape(
    shape: str,
    color: str,
    background: str,
    size: str,
    offset: tuple[float, float],
    image_size: int = 64,
) -> torch.Tensor:
    """Anti-aliased SDF rendering of one shape on a flat background."""
    n = image_size
    ys, xs = np.mgrid[0:n, 0:n]
    x = (xs + 0.5) / n * 2.0 - 1.0 - offset[0]
    y = (ys + 0.5) / n * 2.0 - 1.0 - offset[1]
    radius = 0.28 if size == "small" else 0.52
    sdf = _shape_sdf(shape, x, y, radius)
    px = 2.0 / n
    alpha = np.clip(0.5 - sdf / px, 0.0, 1.0)[..., None]
    fg = np.array(COLOR_RGB[color], dtype=np.float64)
    bg = np.array(COLOR_RGB[background], dtype=np.float64)
    img = alpha * fg + (1.0 - alpha) * bg
    return _to_tensor(img)


def _caption(shape: str, color: str, background: str, size_word: str | None, place_word: str | None) -> str:
    head = f"a {size_word} {color} {shape}" if size_word else f"a {color} {shape}"
    tail = f" at the {place_word}" if place_word else ""
    return f"{head} on a {background} background{tail}"


_PLACE_OFFSET = {"left": (-0.38, 0.0), "right": (0.38, 0.0), "top": (0.0, -0.38), "bottom": (0.0, 0.38)}


def generate_dataset(n: int, seed: int, grammar: Grammar | None = None) -> list[CaptionedImage]:
    """n captioned images, cycled over shape x color cells for class balance;
    backgrounds, sizes, and placements drawn from the seeded stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g = grammar or Grammar()
    rng = np.random.default_rng(seed)
    cells = [(s, c) for s in g.shapes for c in g.colors]
    out: list[CaptionedImage] = []
    for i in range(n):
        shape, color = cells[i % len(cells)]
        bg = g.backgrounds[rng.integers(len(g.backgrounds))]
        size = g.sizes[rng.integers(len(g.sizes))]
        say_size = rng.random() < g.size_word_prob
        if rng.random() < g.place_word_prob:
            place = g.places[rng.integers(len(g.places))]
            offset = _PLACE_OFFSET[place]
            # clamp large off-center shapes so they stay in frame
            if size == "large":
                offset = (offset[0] * 0.75, offset[1] * 0.75)
        else:
            place = None
            offset = tuple(rng.uniform(-0.12, 0.12, size=2))
        img = render_shape(shape, color, bg, size, offset, g.image_size)
        cap = _caption(shape, color, bg, size if say_size else None, place)
        out.append(CaptionedImage(image=img, caption=cap))
    return out


def _render_gradient_polygons(rng: np.random.Generator, image_size: int, supersample: int = 4) -> np.ndarray:
    """Overlapping gradient-filled polygons on a gradient background;
    colors deliberately off the caption palette."""
    n = image_size * supersample
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64) / n

    # background: dark diagonal gradient between two muted off-palette tones
    c0 = rng.uniform(0.02, 0.18, size=3)
    c1 = rng.uniform(0.10, 0.30, size=3)
    tbg = (xs + ys) / 2.0
    img = c0 + (c1 - c0) * tbg[..., None]

    off_palette = [
        (0.55, 0.15, 0.75),  # purple
        (0.10, 0.60, 0.55),  # teal
        (0.80, 0.45, 0.60),  # rose
        (0.45, 0.60, 0.20),  # moss
        (0.85, 0.75, 0.50),  # sand
        (0.25, 0.35, 0.65),  # slate
    ]
    k_poly = 3
    for _ in range(k_poly):
        cx, cy = rng.uniform(0.3, 0.7, size=2)
        n_vert = int(rng.integers(5, 8))
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=n_vert))
        radii = rng.uniform(0.12, 0.34, size=n_vert)
        verts = [(cx + r * math.cos(a), cy + r * math.sin(a)) for r, a in zip(radii, angles)]
        mask_img = Image.new("L", (n, n), 0)
        ImageDraw.Draw(mask_img).polygon([(vx * n, vy * n) for vx, vy in verts], fill=255)
        mask = np.asarray(mask_img, dtype=np.float64) / 255.0

        ca = np.array(off_palette[rng.integers(len(off_palette))])
        cb = np.array(off_palette[rng.integers(len(off_palette))])
        theta = rng.uniform(0, 2 * math.pi)
        tg = (np.cos(theta) * (xs - cx) + np.sin(theta) * (ys - cy)) * 2.0 + 0.5
        tg = np.clip(tg, 0.0, 1.0)
        fill = ca + (cb - ca) * tg[..., None]
        opacity = rng.uniform(0.75, 0.95)
        img = img * (1 - opacity * mask[..., None]) + fill * (opacity * mask[..., None])

    # average-pool the supersampled render for anti-aliasing
    img = img.reshape(image_size, supersample, image_size, supersample, 3).mean(axis=(1, 3))
    return img


def _render_texture(rng: np.random.Generator, image_size: int) -> np.ndarray:
    """Full-field stripe + noise texture with no single foreground object."""
    n = image_size
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64) / n
    theta = rng.uniform(0, math.pi)
    freq = rng.uniform(6.0, 11.0)
    phase = rng.uniform(0, 2 * math.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * math.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase)
    stripes = np.clip((stripes - 0.35) / 0.3, 0.0, 1.0)  # soft-edged bands

    wobble = np.zeros_like(xs)
    for _ in range(3):
        fx, fy = rng.uniform(2.0, 6.0, size=2)
        ph = rng.uniform(0, 2 * math.pi)
        wobble += np.sin(2 * math.pi * (fx * xs + fy * ys) + ph)
    stripes = np.clip(stripes + 0.15 * wobble, 0.0, 1.0)

    ca = rng.uniform(0.05, 0.45, size=3)
    cb = rng.uniform(0.55, 0.95, size=3)
    img = ca + (cb - ca) * stripes[..., None]
    img += rng.normal(0.0, 0.03, size=img.shape)  # film grain
    return img


def make_reference(kind: str, seed: int, image_size: int = 64) -> torch.Tensor:
    """A reference image intentionally outside the caption grammar.

    kind 'composite-novel-shape': overlapping gradient-filled polygons.
    kind 'novel-texture-style': flat-content stripe/noise texture.
    """
    rng = np.random.default_rng(seed + 0x5EED)
    if kind == "composite-novel-shape":
        img = _render_gradient_polygons(rng, image_size)
    elif kind == "novel-texture-style":
        img = _render_texture(rng, image_size)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    return _to_tensor(img)
