"""Boxes, masks and the overlap measures every metric in the package shares.

Boxes are continuous ``(x, y, w, h)`` values and their IoU uses exact real
areas. Masks are bitmaps cropped to their tight bounding box and remember the
size of the image they live in, so two masks from the same image can be
compared without materialising full-resolution arrays.

Polygons are rasterised with the pixel-centre rule: pixel ``(col, row)`` is
set when the point ``(col + 0.5, row + 0.5)`` lies inside the polygon under the
even-odd rule. Multiple polygons of one instance are OR-ed together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Box",
    "GeometryError",
    "Mask",
    "Region",
    "area",
    "box_iou_matrix",
    "compress_rle",
    "decode_rle",
    "encode_rle",
    "iou",
    "is_hull_comparison",
    "mask_from_polygons",
    "rasterize_polygons",
    "union_region",
]


class GeometryError(ValueError):
    """Raised for malformed regions or incompatible region pairs."""


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def clamp(self, width: float, height: float) -> "Box":
        """Clip the box to ``[0, width] x [0, height]``."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        return Box(x1, y1, x2 - x1, y2 - y1)


class Mask:
    """Binary mask stored as a tight crop plus its offset in the image.

    ``bits`` is a boolean array of shape ``(rows, cols)`` whose top-left pixel
    sits at ``(x0, y0)`` in an image of ``height x width`` pixels. Empty masks
    are rejected.
    """

    __slots__ = ("height", "width", "x0", "y0", "bits", "_area")

    def __init__(self, bits: np.ndarray, height: int, width: int, x0: int = 0, y0: int = 0):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise GeometryError("mask bits must be two-dimensional")
        rows = np.flatnonzero(bits.any(axis=1))
        cols = np.flatnonzero(bits.any(axis=0))
        if rows.size == 0:
            raise GeometryError("mask has no set pixels")
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        self.bits = np.ascontiguousarray(bits[r0:r1, c0:c1])
        self.bits.flags.writeable = False
        self.x0 = int(x0 + c0)
        self.y0 = int(y0 + r0)
        self.height = int(height)
        self.width = int(width)
        if self.x0 < 0 or self.y0 < 0 or self.x0 + self.bits.shape[1] > width or self.y0 + self.bits.shape[0] > height:
            raise GeometryError("mask extends beyond its image")
        self._area = int(self.bits.sum())

    @classmethod
    def from_full(cls, full: np.ndarray) -> "Mask":
        full = np.asarray(full, dtype=bool)
        return cls(full, full.shape[0], full.shape[1])

    @property
    def area(self) -> int:
        return self._area

    def bbox(self) -> Box:
        return Box(float(self.x0), float(self.y0), float(self.bits.shape[1]), float(self.bits.shape[0]))

    def to_full(self) -> np.ndarray:
        full = np.zeros((self.height, self.width), dtype=bool)
        r, c = self.bits.shape
        full[self.y0 : self.y0 + r, self.x0 : self.x0 + c] = self.bits
        return full

    def to_rle(self) -> dict:
        return encode_rle(self.to_full())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            (self.height, self.width, self.x0, self.y0) == (other.height, other.width, other.x0, other.y0)
            and self.bits.shape == other.bits.shape
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self) -> int:
        return hash((self.height, self.width, self.x0, self.y0, self.bits.shape, self._area))

    def __repr__(self) -> str:
        return f"Mask(area={self._area}, bbox={self.bbox().as_tuple()}, image={self.height}x{self.width})"


Region = Union[Box, Mask]


def area(a: Region) -> float:
    if isinstance(a, Box):
        return a.w * a.h
    return float(a.area)


def _box_iou(a: Box, b: Box) -> float:
    if a == b:
        # x + w - x need not round back to w
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def _mask_intersection(a: Mask, b: Mask) -> int:
    ax1, ay1 = a.x0 + a.bits.shape[1], a.y0 + a.bits.shape[0]
    bx1, by1 = b.x0 + b.bits.shape[1], b.y0 + b.bits.shape[0]
    x0, y0 = max(a.x0, b.x0), max(a.y0, b.y0)
    x1, y1 = min(ax1, bx1), min(ay1, by1)
    if x1 <= x0 or y1 <= y0:
        return 0
    wa = a.bits[y0 - a.y0 : y1 - a.y0, x0 - a.x0 : x1 - a.x0]
    wb = b.bits[y0 - b.y0 : y1 - b.y0, x0 - b.x0 : x1 - b.x0]
    return int(np.count_nonzero(wa & wb))


def _check_same_image(a: Mask, b: Mask) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise GeometryError(f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}")


def is_hull_comparison(a: Region, b: Region) -> bool:
    """True when a box is compared against a mask (the mask's hull is used)."""
    return isinstance(a, Box) != isinstance(b, Box)


def iou(a: Region, b: Region) -> float:
    """Intersection over union of two regions.

    A box compared with a mask uses the mask's tight bounding box.
    """
    if isinstance(a, Mask) and isinstance(b, Mask):
        _check_same_image(a, b)
        inter = _mask_intersection(a, b)
        return inter / (a.area + b.area - inter)
    if isinstance(a, Mask):
        a = a.bbox()
    if isinstance(b, Mask):
        b = b.bbox()
    return _box_iou(a, b)


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)`` arrays of xywh boxes."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    out = np.minimum(out, 1.0)
    out[(a[:, None, :] == b[None, :, :]).all(axis=2) & (union > 0)] = 1.0
    return out


def union_region(parts: Sequence[Region]) -> Region:
    """Smallest enclosing box for boxes, bitwise OR for masks."""
    if not parts:
        raise GeometryError("union of an empty region list")
    if all(isinstance(p, Box) for p in parts):
        x1 = min(p.x for p in parts)
        y1 = min(p.y for p in parts)
        x2 = max(p.x2 for p in parts)
        y2 = max(p.y2 for p in parts)
        return Box(x1, y1, x2 - x1, y2 - y1)
    if not all(isinstance(p, Mask) for p in parts):
        raise GeometryError("cannot union boxes with masks")
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    for p in parts[1:]:
        _check_same_image(first, p)
    x0 = min(p.x0 for p in parts)
    y0 = min(p.y0 for p in parts)
    x1 = max(p.x0 + p.bits.shape[1] for p in parts)
    y1 = max(p.y0 + p.bits.shape[0] for p in parts)
    canvas = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for p in parts:
        r, c = p.bits.shape
        canvas[p.y0 - y0 : p.y0 - y0 + r, p.x0 - x0 : p.x0 - x0 + c] |= p.bits
    return Mask(canvas, first.height, first.width, x0, y0)


# --- rasterisation -----------------------------------------------------------


def _polygon_window(poly: np.ndarray, height: int, width: int) -> tuple[int, int, int, int]:
    c0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() + 0.5)), width)
    r0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() + 0.5)), height)
    return r0, r1, c0, c1


def _fill_polygon(poly: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # even-odd crossing test evaluated at pixel centres
    py = (rows + 0.5)[:, None]
    px = (cols + 0.5)[None, :]
    inside = np.zeros((rows.size, cols.size), dtype=bool)
    xs, ys = poly[:, 0], poly[:, 1]
    for i in range(len(poly)):
        x1, y1 = xs[i - 1], ys[i - 1]
        x2, y2 = xs[i], ys[i]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_at)
    return inside


def rasterize_polygons(polygons: Sequence[Sequence[float]], height: int, width: int) -> np.ndarray:
    """Rasterise COCO-style flat polygons ``[x1, y1, x2, y2, ...]`` to a full bitmap."""
    full = np.zeros((height, width), dtype=bool)
    for flat in polygons:
        poly = np.asarray(flat, dtype=float).reshape(-1, 2)
        if len(poly) < 3:
            continue
        r0, r1, c0, c1 = _polygon_window(poly, height, width)
        if r1 <= r0 or c1 <= c0:
            continue
        full[r0:r1, c0:c1] |= _fill_polygon(poly, np.arange(r0, r1), np.arange(c0, c1))
    return full


def mask_from_polygons(polygons: Sequence[Sequence[float]], height: int, width: int) -> Mask:
    """Rasterise polygons directly into a cropped :class:`Mask`.

    Only the window covering the polygons is allocated, which matters for
    large radiographs.
    """
    polys = [np.asarray(flat, dtype=float).reshape(-1, 2) for flat in polygons]
    polys = [p for p in polys if len(p) >= 3]
    if not polys:
        raise GeometryError("no polygon with at least three vertices")
    windows = [_polygon_window(p, height, width) for p in polys]
    r0 = min(w[0] for w in windows)
    r1 = max(w[1] for w in windows)
    c0 = min(w[2] for w in windows)
    c1 = max(w[3] for w in windows)
    if r1 <= r0 or c1 <= c0:
        raise GeometryError("polygon lies outside the image")
    rows, cols = np.arange(r0, r1), np.arange(c0, c1)
    canvas = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    for p in polys:
        canvas |= _fill_polygon(p, rows, cols)
    return Mask(canvas, height, width, c0, r0)


# --- run-length encoding (COCO column-major convention) ------------------------


def encode_rle(full: np.ndarray) -> dict:
    """Uncompressed COCO RLE of a full ``(height, width)`` bitmap."""
    full = np.asarray(full, dtype=bool)
    flat = full.T.ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(full.shape[0]), int(full.shape[1])], "counts": [int(c) for c in counts]}


def _counts_from_string(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def _counts_to_string(counts: Sequence[int]) -> str:
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def decode_rle(rle: dict) -> np.ndarray:
    """Decode a COCO RLE (uncompressed list or compressed string counts)."""
    try:
        height, width = (int(v) for v in rle["size"])
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"malformed RLE: {exc}") from None
    if isinstance(counts, bytes):
        counts = counts.decode("ascii")
    if isinstance(counts, str):
        counts = _counts_from_string(counts)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != height * width or (counts < 0).any():
        raise GeometryError(f"RLE counts sum to {counts.sum()}, expected {height * width}")
    values = np.arange(counts.size) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape(width, height).T.copy()


def compress_rle(rle: dict) -> dict:
    """Convert an uncompressed RLE to COCO's compressed string form."""
    return {"size": list(rle["size"]), "counts": _counts_to_string(rle["counts"])}
