"""Piecewise-constant letter phantoms and user masks.

Glyphs are unions of stroked primitives in a unit box ``(u, v)``: ``u`` runs
along x1 (image horizontal), ``v`` along x2 (image up).  Rectangles are
axis-aligned; slanted strokes are rotated rectangles; the omega glyph uses
an annular arc.  The box is centred in Omega and covers half of each axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SpatialGrid

STROKE = 0.08  # domain units
BOX_FRACTION = 0.5
SUB = 4  # cell subsamples per axis


@dataclass(frozen=True)
class Phantom:
    grid: SpatialGrid
    values: np.ndarray
    a_inside: float
    mask: np.ndarray
    name: str = "custom"


def _rect(u0, u1, v0, v1):
    return lambda u, v: (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)


def _stroke(p, q, w):
    """Rotated rectangle of width ``w`` along the segment ``p -> q``."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    length = np.hypot(*d)
    e = d / length

    def f(u, v):
        du, dv = u - p[0], v - p[1]
        along = du * e[0] + dv * e[1]
        across = np.abs(-du * e[1] + dv * e[0])
        return (along >= 0) & (along <= length) & (across <= w / 2)

    return f


def _arc(cu, cv, r_out, w, gap_below):
    """Annulus around ``(cu, cv)`` with the part below ``v = gap_below`` removed."""
    def f(u, v):
        r = np.hypot(u - cu, v - cv)
        return (r <= r_out) & (r >= r_out - w) & (v >= gap_below)

    return f


def _glyph_parts(name: str, s: float):
    """Primitives for glyph ``name`` with normalised stroke ``s``."""
    if name == "L":
        return [_rect(0, s, 0, 1), _rect(0, 0.75, 0, s)]
    if name == "B":
        m0, m1 = 0.5 - s / 2, 0.5 + s / 2
        return [
            _rect(0, s, 0, 1),
            _rect(0, 0.75, 1 - s, 1),
            _rect(0, 0.85, m0, m1),
            _rect(0, 0.85, 0, s),
            _rect(0.75 - s, 0.75, 0.5, 1),
            _rect(0.85 - s, 0.85, 0, 0.5),
        ]
    if name == "A":
        return [
            _stroke((s / 2, 0), (0.5, 1), s),
            _stroke((1 - s / 2, 0), (0.5, 1), s),
            _rect(0.25, 0.75, 0.35, 0.35 + s),
        ]
    if name == "K":
        return [
            _rect(0, s, 0, 1),
            _stroke((s, 0.5), (0.9, 1.0), s),
            _stroke((s, 0.5), (0.9, 0.0), s),
        ]
    if name == "OmegaGlyph":
        return [
            _arc(0.5, 0.55, 0.45, s, 0.2),
            _rect(0.05, 0.35, 0, s),
            _rect(0.65, 0.95, 0, s),
            _rect(0.15, 0.15 + s, 0, 0.3),
            _rect(0.85 - s, 0.85, 0, 0.3),
        ]
    if name == "SZ":
        return [
            # S in the left half
            _rect(0, 0.42, 1 - s, 1),
            _rect(0, 0.42, 0.5 - s / 2, 0.5 + s / 2),
            _rect(0, 0.42, 0, s),
            _rect(0, s, 0.5, 1),
            _rect(0.42 - s, 0.42, 0, 0.5),
            # Z in the right half
            _rect(0.58, 1, 1 - s, 1),
            _rect(0.58, 1, 0, s),
            _stroke((0.58 + s / 2, s), (1 - s / 2, 1 - s), s),
        ]
    raise ValueError(f"unknown glyph {name!r}; choose from {', '.join(GLYPHS)}")


GLYPHS = ("A", "B", "OmegaGlyph", "SZ", "L", "K")


def glyph_indicator(grid: SpatialGrid, letter: str) -> np.ndarray:
    """Boolean mask of nodes covered by the glyph (before the margin rule)."""
    if letter not in GLYPHS:
        raise ValueError(f"unknown glyph {letter!r}; choose from {', '.join(GLYPHS)}")
    lo = np.asarray(grid.domain.lo)
    hi = np.asarray(grid.domain.hi)
    width = hi - lo
    box_lo = lo + 0.5 * (1 - BOX_FRACTION) * width
    box_w = BOX_FRACTION * width
    s = STROKE / box_w[0]
    parts = _glyph_parts(letter, s)
    # majority coverage of each node's cell, sampled on a SUB x SUB lattice
    offs = (np.arange(SUB) + 0.5) / SUB - 0.5
    cover = np.zeros(grid.N)
    for ou in offs:
        for ov in offs:
            u = (grid.coords[0] + ou * grid.spacing[0] - box_lo[0]) / box_w[0]
            v = (grid.coords[1] + ov * grid.spacing[1] - box_lo[1]) / box_w[1]
            hit = np.zeros(grid.N, dtype=bool)
            for part in parts:
                hit |= part(u, v)
            cover += hit
    inside = cover >= 0.5 * SUB * SUB
    if grid.n == 3:
        x3 = grid.coords[2]
        inside &= (x3 >= lo[2] + width[2] / 3) & (x3 <= lo[2] + 2 * width[2] / 3)
    return inside


def _from_mask(grid, mask, a_inside, name):
    if a_inside < 0:
        raise ValueError("inclusion amplitude must be non-negative")
    mask = mask & grid.interior_mask
    values = np.where(mask, float(a_inside), 0.0)
    return Phantom(grid, values, float(a_inside), mask, name)


def letter_phantom(grid: SpatialGrid, letter: str, a_inside: float) -> Phantom:
    """Rasterise glyph ``letter`` with amplitude ``a_inside``; zero boundary ring."""
    return _from_mask(grid, glyph_indicator(grid, letter), a_inside, letter)


def zero_phantom(grid: SpatialGrid) -> Phantom:
    return _from_mask(grid, np.zeros(grid.N, dtype=bool), 0.0, "zero")


def mask_from_image(grid: SpatialGrid, image: np.ndarray, a_inside: float,
                    maxval: int = 255) -> Phantom:
    """Dark pixels (below half of ``maxval``) mark the inclusion.

    ``image`` rows run from high x2 (top) to low x2, columns along x1.  Nodes
    take the pixel they fall in; 3-D grids extrude over the central third.
    """
    img = np.asarray(image)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValueError("image must be a non-empty 2-D array")
    H, W = img.shape
    lo, hi = grid.domain.lo, grid.domain.hi
    fx = (grid.coords[0] - lo[0]) / (hi[0] - lo[0])
    fy = (hi[1] - grid.coords[1]) / (hi[1] - lo[1])
    col = np.clip(np.floor(fx * W).astype(int), 0, W - 1)
    row = np.clip(np.floor(fy * H).astype(int), 0, H - 1)
    dark = img[row, col] < maxval / 2.0
    if grid.n == 3:
        x3 = grid.coords[2]
        w3 = hi[2] - lo[2]
        dark &= (x3 >= lo[2] + w3 / 3) & (x3 <= lo[2] + 2 * w3 / 3)
    return _from_mask(grid, dark, a_inside, "image")
