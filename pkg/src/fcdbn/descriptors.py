"""Baseline face matchers: uniform LBP and HOG, with a [0, 1] match score.

These produce the primary verification score that the fusion experiments
boost with kin scores. LBP uses the 8 integer neighbors at radius 1 with a
strict greater-than threshold (a constant image lands in the all-zero
pattern bin) and replicate padding at the border, histogrammed per 8x8
cell over the 59 uniform bins. HOG uses 9 unsigned orientation bins, 8x8
cells, and 2x2 blocks normalized to unit L2 norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LBP_BINS = 59
HOG_BINS = 9
CELL = 8

# neighbor offsets in circular order, bit k has weight 2^k
_NEIGHBORS = ((0, 1), (-1, 1), (-1, 0), (-1, -1),
              (0, -1), (1, -1), (1, 0), (1, 1))


@dataclass
class DescriptorVec:
    kind: str
    values: np.ndarray
    cell_layout: tuple


def _uniform_table():
    """Map each 8-bit pattern to its uniform bin (58 = non-uniform)."""
    table = np.full(256, LBP_BINS - 1, dtype=int)
    uniform_codes = []
    for code in range(256):
        rotated = ((code << 1) | (code >> 7)) & 0xFF
        transitions = bin(code ^ rotated).count("1")
        if transitions <= 2:
            uniform_codes.append(code)
    for idx, code in enumerate(sorted(uniform_codes)):
        table[code] = idx
    return table


_UNIFORM_TABLE = _uniform_table()


def _check_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] < 16 or image.shape[1] < 16:
        raise ValueError(f"descriptor needs a grayscale image >= 16x16, "
                         f"got {image.shape}")
    return image


def _cell_slices(n):
    edges = list(range(0, n, CELL))
    return [(lo, min(lo + CELL, n)) for lo in edges]


def lbp_codes(image):
    """Per-pixel uniform LBP codes with replicate-padded neighbors."""
    image = _check_image(image)
    padded = np.pad(image, 1, mode="edge")
    h, w = image.shape
    code = np.zeros((h, w), dtype=int)
    for bit, (dr, dc) in enumerate(_NEIGHBORS):
        neighbor = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        code |= (neighbor > image).astype(int) << bit
    return _UNIFORM_TABLE[code]


def lbp_descriptor(image):
    """Concatenated 59-bin uniform LBP histograms over the 8x8 cell grid."""
    codes = lbp_codes(image)
    rows = _cell_slices(codes.shape[0])
    cols = _cell_slices(codes.shape[1])
    hists = []
    for r0, r1 in rows:
        for c0, c1 in cols:
            hist = np.bincount(codes[r0:r1, c0:c1].ravel(), minlength=LBP_BINS)
            hists.append(hist.astype(np.float64))
    return DescriptorVec(kind="lbp", values=np.concatenate(hists),
                         cell_layout=(len(rows), len(cols)))


def _gradients(image):
    """Central differences with replicate padding; gx along columns."""
    padded = np.pad(image, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def hog_cells(image):
    """Per-cell orientation histograms, magnitude-weighted, soft-binned.

    Unsigned orientation in [0, 180), bin centers at k * 20 degrees; each
    pixel votes into the two nearest centers in proportion to distance.
    """
    image = _check_image(image)
    gx, gy = _gradients(image)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    pos = ang / (180.0 / HOG_BINS)
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    rows = _cell_slices(image.shape[0])
    cols = _cell_slices(image.shape[1])
    cells = np.zeros((len(rows), len(cols), HOG_BINS))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            lo_c = lo[r0:r1, c0:c1].ravel() % HOG_BINS
            hi_c = (lo[r0:r1, c0:c1].ravel() + 1) % HOG_BINS
            m = mag[r0:r1, c0:c1].ravel()
            f = frac[r0:r1, c0:c1].ravel()
            cells[i, j] += np.bincount(lo_c, weights=m * (1 - f),
                                       minlength=HOG_BINS)
            cells[i, j] += np.bincount(hi_c, weights=m * f, minlength=HOG_BINS)
    return cells


def hog_descriptor(image):
    """2x2-cell blocks of orientation histograms, each unit L2-normalized.

    Blocks with no gradient energy stay exactly zero.
    """
    cells = hog_cells(image)
    nr, nc, _ = cells.shape
    blocks = []
    for i in range(nr - 1):
        for j in range(nc - 1):
            v = cells[i:i + 2, j:j + 2].ravel()
            norm = np.linalg.norm(v)
            blocks.append(v / norm if norm > 0 else v)
    return DescriptorVec(kind="hog", values=np.concatenate(blocks),
                         cell_layout=(nr, nc))


def chi_square(h1, h2):
    """chi^2 histogram distance: sum (a-b)^2 / (a+b) over occupied bins."""
    total = h1 + h2
    occupied = total > 0
    diff = h1 - h2
    return float(np.sum(diff[occupied] ** 2 / total[occupied]))


def match_score(d1, d2):
    """Similarity in [0, 1]; 1 exactly iff the descriptors are identical.

    LBP: 1 / (1 + chi^2). HOG: cosine similarity mapped to [0, 1]; a zero
    vector against a nonzero one scores 0.5 (cosine taken as 0).
    """
    if d1.kind != d2.kind or d1.cell_layout != d2.cell_layout \
            or d1.values.shape != d2.values.shape:
        raise ValueError(
            f"incompatible descriptors: {d1.kind}/{d1.cell_layout} vs "
            f"{d2.kind}/{d2.cell_layout}"
        )
    if np.array_equal(d1.values, d2.values):
        return 1.0
    if d1.kind == "lbp":
        return 1.0 / (1.0 + chi_square(d1.values, d2.values))
    n1 = np.linalg.norm(d1.values)
    n2 = np.linalg.norm(d2.values)
    cos = 0.0 if n1 == 0 or n2 == 0 else float(d1.values @ d2.values / (n1 * n2))
    return (cos + 1.0) / 2.0
