"""Binary instance masks: dense grids, compressed run-length encoding, and
exact overlap arithmetic (IoU, area, NMS).

Dense masks are plain numpy boolean arrays of shape ``(height, width)``.
Compressed masks (:class:`RleMask`) store alternating background/foreground
run lengths in column-major pixel order, packed into a printable codestring
(5 bits per character, ascii 48..111, later runs delta-coded against the run
two positions back). The codestring is byte-compatible with the de-facto
COCO mask interchange format, so serialized masks can be consumed by the
usual evaluation tooling.

Intersections, unions and areas are integer pixel counts throughout; a ratio
is formed by a single int/int division at the API boundary, which keeps IoU
comparisons exact and platform independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RleMask",
    "compress_counts",
    "decompress_counts",
    "encode_rle",
    "decode_rle",
    "rle_area",
    "mask_area",
    "mask_iou",
    "rle_iou",
    "mask_iou_matrix",
    "mask_nms",
]


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded binary mask.

    ``counts`` is the compressed codestring; decoding it yields alternating
    background/foreground run lengths (background first, possibly of length
    zero) over the column-major pixel scan of a ``height`` x ``width`` grid.
    Values produced by :func:`encode_rle` are canonical: re-encoding the
    decoded mask reproduces the codestring byte for byte.
    """

    height: int
    width: int
    counts: str

    def to_json(self) -> dict:
        """Serialize as the ``{"size": [h, w], "counts": str}`` JSON object."""
        return {"size": [self.height, self.width], "counts": self.counts}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed RLE object: {obj!r}") from exc
        if not isinstance(h, int) or not isinstance(w, int) or h < 1 or w < 1:
            raise ValueError(f"RLE size must be two positive ints, got {obj['size']!r}")
        if not isinstance(counts, str):
            raise ValueError("RLE counts must be a codestring")
        return cls(h, w, counts)


def compress_counts(runs: Iterable[int]) -> str:
    """Pack run lengths into the printable 5-bit variable-length codestring.

    Each value is emitted low bits first in 5-bit groups; every character is
    the group value plus 48, with bit 5 (0x20) flagging a continuation. The
    first three runs are stored raw, every later run as a signed difference
    from the run two positions earlier. The encoding is canonical: each value
    uses the minimal number of groups.
    """
    vals = np.asarray(list(runs) if not isinstance(runs, np.ndarray) else runs, dtype=np.int64)
    if vals.ndim != 1:
        raise ValueError("runs must be a flat sequence")
    if vals.size == 0:
        return ""
    if vals.min() < 0:
        raise ValueError("run lengths must be non-negative")

    deltas = vals.copy()
    deltas[3:] = vals[3:] - vals[1:-2]

    # chars per value: smallest k with -2^(5k-1) <= x < 2^(5k-1)
    nchars = np.ones(vals.size, dtype=np.int64)
    lo, hi = -16, 16
    while True:
        pending = (deltas < lo) | (deltas >= hi)
        if not pending.any():
            break
        nchars[pending] += 1
        lo <<= 5
        hi <<= 5

    out = np.empty(int(nchars.sum()), dtype=np.uint8)
    offsets = np.cumsum(nchars) - nchars
    for g in range(int(nchars.max())):
        sel = nchars > g
        group = (deltas[sel] >> (5 * g)) & 0x1F
        cont = np.where(nchars[sel] - 1 > g, 0x20, 0)
        out[offsets[sel] + g] = (group | cont) + 48
    return out.tobytes().decode("ascii")


def decompress_counts(counts: str) -> np.ndarray:
    """Inverse of :func:`compress_counts`; returns run lengths as int64.

    Raises ValueError for characters outside ascii 48..111 or a codestring
    ending mid-continuation.
    """
    try:
        raw = np.frombuffer(counts.encode("ascii"), dtype=np.uint8).astype(np.int64) - 48
    except UnicodeEncodeError as exc:
        raise ValueError("codestring character outside the 48..111 range") from exc
    if raw.size == 0:
        return np.zeros(0, dtype=np.int64)
    if raw.min() < 0 or raw.max() > 63:
        raise ValueError("codestring character outside the 48..111 range")

    cont = (raw & 0x20) != 0
    if cont[-1]:
        raise ValueError("truncated continuation chain")
    ends = np.flatnonzero(~cont)
    starts = np.concatenate(([0], ends[:-1] + 1))
    nchars = ends - starts + 1
    if nchars.max() > 12:
        raise ValueError("continuation chain too long")

    pos = np.arange(raw.size) - np.repeat(starts, nchars)
    contrib = (raw & 0x1F) << (5 * pos)
    deltas = np.add.reduceat(contrib, starts)
    negative = (raw[ends] & 0x10) != 0
    deltas = np.where(negative, deltas - (np.int64(1) << (5 * nchars)), deltas)

    # undo the two-back delta chains (raw values at indices 0..2)
    cnts = deltas.copy()
    cnts[1::2] = np.cumsum(deltas[1::2])
    cnts[2::2] = np.cumsum(deltas[2::2])
    return cnts


def _as_bitmask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be 2-d with positive dims, got shape {m.shape}")
    return m if m.dtype == bool else m.astype(bool)


def encode_rle(mask: np.ndarray) -> RleMask:
    """Encode a dense boolean mask into its canonical :class:`RleMask`."""
    m = _as_bitmask(mask)
    h, w = m.shape
    flat = m.ravel(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return RleMask(h, w, compress_counts(runs))


def _checked_runs(rle: RleMask) -> np.ndarray:
    runs = decompress_counts(rle.counts)
    if runs.size and runs.min() < 0:
        raise ValueError("malformed codestring: negative run length")
    total = int(runs.sum())
    if total != rle.height * rle.width:
        raise ValueError(
            f"run-length total {total} does not cover {rle.height}x{rle.width} pixels"
        )
    return runs


def decode_rle(rle: RleMask) -> np.ndarray:
    """Decode an :class:`RleMask` into a dense boolean ``(h, w)`` array."""
    runs = _checked_runs(rle)
    values = np.zeros(runs.size, dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return flat.reshape((rle.height, rle.width), order="F")


def rle_area(rle: RleMask) -> int:
    """Foreground pixel count, straight off the run lengths."""
    runs = _checked_runs(rle)
    return int(runs[1::2].sum())


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(_as_bitmask(mask)))


def _require_same_shape(ha: int, wa: int, hb: int, wb: int) -> None:
    if (ha, wa) != (hb, wb):
        raise ValueError(f"mask dimension mismatch: {ha}x{wa} vs {hb}x{wb}")


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Exact intersection-over-union of two dense masks (0.0 when both empty)."""
    ma, mb = _as_bitmask(a), _as_bitmask(b)
    _require_same_shape(*ma.shape, *mb.shape)
    inter = int(np.count_nonzero(ma & mb))
    union = int(np.count_nonzero(ma)) + int(np.count_nonzero(mb)) - inter
    return inter / union if union else 0.0


def _foreground_intervals(runs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Half-open foreground intervals [start, end) on the column-major scan."""
    bounds = np.concatenate(([0], np.cumsum(runs)))
    starts = bounds[1::2]
    ends = bounds[2::2]
    return starts[: ends.size], ends


def _interval_intersection(
    sa: np.ndarray, ea: np.ndarray, sb: np.ndarray, eb: np.ndarray
) -> int:
    """Total overlap length between two sorted disjoint interval lists."""
    if sa.size == 0 or sb.size == 0:
        return 0
    lo = np.searchsorted(eb, sa, side="right")
    hi = np.searchsorted(sb, ea, side="left")
    has = hi > lo
    if not has.any():
        return 0
    sa, ea, lo, hi = sa[has], ea[has], lo[has], hi[has]
    peb = np.concatenate(([0], np.cumsum(eb)))
    psb = np.concatenate(([0], np.cumsum(sb)))
    # within [lo, hi) only the last b-interval can outlast ea and only the
    # first can start before sa, so prefix sums cover the interior exactly
    sum_min = peb[hi - 1] - peb[lo] + np.minimum(ea, eb[hi - 1])
    sum_max = np.maximum(sa, sb[lo]) + (psb[hi] - psb[lo + 1])
    return int((sum_min - sum_max).sum())


def rle_iou(a: RleMask, b: RleMask) -> float:
    """IoU computed by merging run lists, without decoding to dense masks.

    Bit-for-bit equal to ``mask_iou(decode_rle(a), decode_rle(b))``.
    """
    _require_same_shape(a.height, a.width, b.height, b.width)
    runs_a, runs_b = _checked_runs(a), _checked_runs(b)
    sa, ea = _foreground_intervals(runs_a)
    sb, eb = _foreground_intervals(runs_b)
    inter = _interval_intersection(sa, ea, sb, eb)
    union = int(runs_a[1::2].sum()) + int(runs_b[1::2].sum()) - inter
    return inter / union if union else 0.0


def _mask_bbox(m: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight bbox as (y0, y1, x0, x1) half-open, or None for an empty mask."""
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def mask_iou_matrix(
    masks_a: Sequence[np.ndarray], masks_b: Sequence[np.ndarray]
) -> np.ndarray:
    """Pairwise IoU between two lists of same-sized dense masks.

    Pairs whose bounding boxes do not intersect are zero without touching
    pixels; surviving pairs count intersection only inside the bbox overlap
    window. Entries equal ``mask_iou`` on the same pair exactly.
    """
    a = [_as_bitmask(m) for m in masks_a]
    b = [_as_bitmask(m) for m in masks_b]
    out = np.zeros((len(a), len(b)))
    if not a or not b:
        return out
    shape = a[0].shape
    for m in a[1:] + b:
        _require_same_shape(*shape, *m.shape)

    boxes_a = [_mask_bbox(m) for m in a]
    boxes_b = [_mask_bbox(m) for m in b]
    areas_a = [int(np.count_nonzero(m)) for m in a]
    areas_b = [int(np.count_nonzero(m)) for m in b]
    for i, box_a in enumerate(boxes_a):
        if box_a is None:
            continue
        ay0, ay1, ax0, ax1 = box_a
        for j, box_b in enumerate(boxes_b):
            if box_b is None:
                continue
            y0, y1 = max(ay0, box_b[0]), min(ay1, box_b[1])
            x0, x1 = max(ax0, box_b[2]), min(ax1, box_b[3])
            if y0 >= y1 or x0 >= x1:
                continue
            inter = int(np.count_nonzero(a[i][y0:y1, x0:x1] & b[j][y0:y1, x0:x1]))
            union = areas_a[i] + areas_b[j] - inter
            if inter:
                out[i, j] = inter / union
    return out


def mask_nms(
    items: Sequence[tuple[np.ndarray, float]], iou_threshold: float
) -> list[int]:
    """Greedy non-maximum suppression over (mask, priority) pairs.

    Keeps items in descending priority order (ties to the lower original
    index) and drops any item whose IoU with an already-kept item is strictly
    greater than ``iou_threshold``. Returns kept indices in input order.
    """
    masks = [_as_bitmask(m) for m, _ in items]
    if masks:
        shape = masks[0].shape
        for m in masks[1:]:
            _require_same_shape(*shape, *m.shape)
    priorities = [float(p) for _, p in items]
    order = sorted(range(len(items)), key=lambda i: (-priorities[i], i))

    boxes = [_mask_bbox(m) for m in masks]
    areas = [int(np.count_nonzero(m)) for m in masks]
    kept: list[int] = []
    for i in order:
        suppressed = False
        for k in kept:
            if boxes[i] is None or boxes[k] is None:
                continue
            y0, y1 = max(boxes[i][0], boxes[k][0]), min(boxes[i][1], boxes[k][1])
            x0, x1 = max(boxes[i][2], boxes[k][2]), min(boxes[i][3], boxes[k][3])
            if y0 >= y1 or x0 >= x1:
                continue
            inter = int(np.count_nonzero(masks[i][y0:y1, x0:x1] & masks[k][y0:y1, x0:x1]))
            union = areas[i] + areas[k] - inter
            if union and inter / union > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return sorted(kept)
