"""Binary-raster primitives: IoU, connected components, exact EDT, boundaries, mask I/O.

Coordinate convention used across the package: arrays are indexed ``[y, x]``
(row-major), clicks carry ``(x, y)`` pixel coordinates, and distances are
measured between pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class DimensionMismatchError(ValueError):
    """Two rasters that must share dimensions do not."""


class EmptyTargetError(ValueError):
    """Distance transform requested toward an empty target set."""


class MaskFileError(ValueError):
    """Mask file is unreadable or not an 8-bit gray / paletted PNG."""


class RleFormatError(ValueError):
    """Malformed RLE v1 mask string."""


class Bitmask:
    """Immutable binary raster; ``a[y, x]`` is True on foreground.

    The backing array is copied on construction and marked read-only, so a
    Bitmask can be shared freely across threads.
    """

    __slots__ = ("a",)

    def __init__(self, bits) -> None:
        a = np.array(bits, dtype=bool)
        if a.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"mask sides must be >= 1, got shape {a.shape}")
        a.setflags(write=False)
        self.a = a

    @classmethod
    def empty(cls, width: int, height: int) -> "Bitmask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "Bitmask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.a.shape[1]

    @property
    def height(self) -> int:
        return self.a.shape[0]

    @property
    def count(self) -> int:
        """Number of foreground pixels."""
        return int(self.a.sum())

    @property
    def is_empty(self) -> bool:
        return not self.a.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bitmask):
            return NotImplemented
        return self.a.shape == other.a.shape and bool(np.array_equal(self.a, other.a))

    def __xor__(self, other: "Bitmask") -> "Bitmask":
        _require_same_shape(self, other)
        return Bitmask(self.a ^ other.a)

    def __and__(self, other: "Bitmask") -> "Bitmask":
        _require_same_shape(self, other)
        return Bitmask(self.a & other.a)

    def __or__(self, other: "Bitmask") -> "Bitmask":
        _require_same_shape(self, other)
        return Bitmask(self.a | other.a)

    def __invert__(self) -> "Bitmask":
        return Bitmask(~self.a)

    def __repr__(self) -> str:
        return f"Bitmask({self.width}x{self.height}, {self.count} fg)"


@dataclass(frozen=True)
class LabelMap:
    """Connected-component labels; 0 is background, components are 1..count.

    Labels follow raster-scan discovery order: component 1 contains the
    first foreground pixel in row-major order, and so on.
    """

    labels: np.ndarray
    count: int

    def sizes(self) -> np.ndarray:
        """Pixel count per component, index k-1 for label k."""
        if self.count == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]

    def component(self, label: int) -> Bitmask:
        if not 1 <= label <= self.count:
            raise ValueError(f"label {label} out of range 1..{self.count}")
        return Bitmask(self.labels == label)


def _require_same_shape(a: Bitmask, b: Bitmask) -> None:
    if a.a.shape != b.a.shape:
        raise DimensionMismatchError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def iou(a: Bitmask, b: Bitmask) -> float:
    """Intersection over union in [0, 1]; two empty masks score 1.0."""
    _require_same_shape(a, b)
    inter = int((a.a & b.a).sum())
    union = int((a.a | b.a).sum())
    if union == 0:
        return 1.0
    return inter / union


def connected_components(m: Bitmask, connectivity: int = 4) -> LabelMap:
    """Label foreground components via run-based union-find.

    connectivity is 4 or 8. Runs of consecutive foreground pixels per row are
    the union-find items, so cost scales with run count rather than pixels.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    bits = m.a
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    if not bits.any():
        return LabelMap(labels, 0)

    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = bits
    d = np.diff(padded, axis=1)
    run_rows, run_starts = np.nonzero(d == 1)
    _, run_ends = np.nonzero(d == -1)  # exclusive; aligned with starts
    n_runs = len(run_rows)

    parent = list(range(n_runs))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj

    # index of first run per row (n_runs sentinel at the end)
    row_first = np.searchsorted(run_rows, np.arange(h + 1))
    tol = 0 if connectivity == 4 else 1
    starts = run_starts.tolist()
    ends = run_ends.tolist()
    for r in range(1, h):
        ia, ia_end = int(row_first[r - 1]), int(row_first[r])
        ib, ib_end = int(row_first[r]), int(row_first[r + 1])
        while ia < ia_end and ib < ib_end:
            lo = max(starts[ia], starts[ib])
            hi = min(ends[ia], ends[ib])
            if lo < hi + tol:
                union(ia, ib)
            if ends[ia] < ends[ib]:
                ia += 1
            elif ends[ib] < ends[ia]:
                ib += 1
            else:
                ia += 1
                ib += 1

    # relabel components 1..K in order of first raster appearance
    root_label: dict[int, int] = {}
    next_label = 1
    run_label = np.empty(n_runs, dtype=np.int32)
    for i in range(n_runs):
        root = find(i)
        lab = root_label.get(root)
        if lab is None:
            lab = next_label
            root_label[root] = lab
            next_label += 1
        run_label[i] = lab

    rows = run_rows.tolist()
    lab_list = run_label.tolist()
    for i in range(n_runs):
        labels[rows[i], starts[i]:ends[i]] = lab_list[i]
    return LabelMap(labels, next_label - 1)


def _edt_squared(target: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True cell.

    Two passes: per-column 1D scan, then a per-row lower envelope of
    parabolas. All squared values are integers represented exactly in
    float64, so results are exact.
    """
    h, w = target.shape
    inf = float("inf")
    big = float(h + w + 1)
    g = np.where(target, 0.0, big)
    for y in range(1, h):
        np.minimum(g[y], g[y - 1] + 1.0, out=g[y])
    for y in range(h - 2, -1, -1):
        np.minimum(g[y], g[y + 1] + 1.0, out=g[y])

    cols = np.flatnonzero(target.any(axis=0)).tolist()
    f2 = g * g
    out = np.empty((h, w), dtype=np.float64)
    xs = np.arange(w)
    n_sites = len(cols)
    v = [0] * n_sites
    z = [0.0] * (n_sites + 1)
    for y in range(h):
        fy = f2[y].tolist()
        k = 0
        v[0] = cols[0]
        z[0] = -inf
        for q in cols[1:]:
            fq = fy[q] + q * q
            while True:
                p = v[k]
                s = (fq - (fy[p] + p * p)) / (2.0 * (q - p))
                if k == 0 or s > z[k - 1]:
                    break
                k -= 1
            v[k + 1] = q
            z[k] = s
            k += 1
        z[k] = inf
        # evaluate: parabola j is active on [z[j-1], z[j])
        idx = np.searchsorted(z[: k + 1], xs, side="right") if k > 0 else np.zeros(w, dtype=np.int64)
        sel = np.asarray(v, dtype=np.int64)[np.minimum(idx, k)]
        out[y] = (xs - sel) ** 2 + f2[y][sel]
    return out


def distance_transform(
    m: Bitmask, to: str = "foreground", *, border_is_background: bool = False
) -> np.ndarray:
    """Exact Euclidean distance (float64, pixels) to the nearest target pixel.

    to selects the target set ("foreground" or "background"). With
    border_is_background, a virtual one-pixel background ring outside the
    image also counts as target when to="background"; this keeps the
    transform defined for full-frame masks.
    """
    if to not in ("foreground", "background"):
        raise ValueError(f"to must be 'foreground' or 'background', got {to!r}")
    target = m.a if to == "foreground" else ~m.a
    if border_is_background and to == "background":
        padded = np.pad(target, 1, constant_values=True)
        return np.sqrt(_edt_squared(padded))[1:-1, 1:-1]
    if not target.any():
        raise EmptyTargetError(f"distance transform toward empty {to} set")
    return np.sqrt(_edt_squared(target))


def boundary(m: Bitmask) -> Bitmask:
    """Foreground pixels with at least one background 4-neighbor.

    Pixels on the image border count their out-of-image neighbors as
    background, so a full-frame mask has a full boundary ring.
    """
    bits = m.a
    padded = np.pad(bits, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return Bitmask(bits & ~interior)


def mask_to_rle(m: Bitmask) -> str:
    """Serialize to the textual "RLE v1" form.

    Format: ``RLE v1: <width> <height>; <start> <length> ...`` where runs are
    foreground runs over the row-major flattened grid, starts ascending.
    """
    flat = m.a.ravel()
    padded = np.zeros(flat.size + 2, dtype=np.int8)
    padded[1:-1] = flat
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    pairs = " ".join(f"{s} {e - s}" for s, e in zip(starts, ends))
    body = f" {pairs}" if pairs else ""
    return f"RLE v1: {m.width} {m.height};{body}"


def mask_from_rle(text: str) -> Bitmask:
    """Parse the textual "RLE v1" form back into a mask."""
    prefix = "RLE v1:"
    if not text.startswith(prefix):
        raise RleFormatError(f"missing {prefix!r} prefix")
    rest = text[len(prefix):]
    head, sep, runs_part = rest.partition(";")
    if not sep:
        raise RleFormatError("missing ';' separator")
    try:
        width, height = (int(t) for t in head.split())
    except ValueError as e:
        raise RleFormatError(f"bad dimensions header: {head!r}") from e
    if width < 1 or height < 1:
        raise RleFormatError(f"dimensions must be >= 1, got {width}x{height}")
    tokens = runs_part.split()
    if len(tokens) % 2 != 0:
        raise RleFormatError("run list must contain (start, length) pairs")
    flat = np.zeros(width * height, dtype=bool)
    prev_end = 0
    for i in range(0, len(tokens), 2):
        try:
            start, length = int(tokens[i]), int(tokens[i + 1])
        except ValueError as e:
            raise RleFormatError(f"non-integer run token near {tokens[i]!r}") from e
        if length < 1 or start < prev_end or start + length > flat.size:
            raise RleFormatError(f"invalid run ({start}, {length})")
        flat[start:start + length] = True
        prev_end = start + length
    return Bitmask(flat.reshape(height, width))


def load_mask(path, instance_id: int | None = None) -> Bitmask:
    """Load an 8-bit gray or paletted PNG as a mask.

    With instance_id, only pixels carrying that exact value become
    foreground (paletted instance masks); otherwise any nonzero pixel does.
    """
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "1"):
                raise MaskFileError(
                    f"{path}: unsupported mode {img.mode!r}; need 8-bit gray or paletted"
                )
            arr = np.asarray(img.convert("L") if img.mode == "1" else img)
    except MaskFileError:
        raise
    except (OSError, SyntaxError, ValueError) as e:
        raise MaskFileError(f"{path}: cannot read mask file: {e}") from e
    if instance_id is not None:
        return Bitmask(arr == instance_id)
    return Bitmask(arr != 0)


def save_mask(m: Bitmask, path) -> None:
    """Write the mask as an 8-bit gray PNG (0 background, 255 foreground)."""
    arr = np.where(m.a, 255, 0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
