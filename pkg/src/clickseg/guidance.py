"""Click and mask encodings that form the predictor input channels.

A guidance stack is the image (3 unit-range channels) plus one channel per
click polarity and an optional previous-mask channel, in the fixed order
R, G, B, positive, negative[, mask].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .raster import Bitmask, DimensionMismatchError, distance_transform

POSITIVE = "positive"
NEGATIVE = "negative"

GAUSSIAN_SIGMA = 10.0       # std-dev of the click Gaussians, pixels
GAUSSIAN_CLIP_RADIUS = 20.0  # Gaussians are zero beyond this distance
DISTANCE_TRUNCATION = 255.0  # click-distance channels saturate here
MASK_TRUNCATION = 20.0       # previous-mask encoding saturates here

GSTK_MAGIC = b"GSTK1"


class ClickOutOfBoundsError(ValueError):
    """Click coordinates fall outside the image."""


@dataclass(frozen=True)
class Click:
    """One user click: pixel coordinates, polarity, and insertion index."""

    x: int
    y: int
    polarity: str
    round: int = 0

    def __post_init__(self) -> None:
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"polarity must be {POSITIVE!r} or {NEGATIVE!r}, got {self.polarity!r}")

    @property
    def is_positive(self) -> bool:
        return self.polarity == POSITIVE


class ClickSet:
    """Immutable ordered collection of clicks.

    Rounds are strictly increasing and no two clicks may share the same
    (x, y, polarity) triple.
    """

    __slots__ = ("clicks",)

    def __init__(self, clicks: Iterable[Click] = ()) -> None:
        clicks = tuple(clicks)
        seen = set()
        prev_round = None
        for c in clicks:
            key = (c.x, c.y, c.polarity)
            if key in seen:
                raise ValueError(f"duplicate click at {key}")
            seen.add(key)
            if prev_round is not None and c.round <= prev_round:
                raise ValueError("click rounds must be strictly increasing")
            prev_round = c.round
        self.clicks = clicks

    @property
    def next_round(self) -> int:
        return self.clicks[-1].round + 1 if self.clicks else 0

    def with_click(self, x: int, y: int, polarity: str) -> "ClickSet":
        return ClickSet(self.clicks + (Click(int(x), int(y), polarity, self.next_round),))

    def without_last(self) -> "ClickSet":
        if not self.clicks:
            raise ValueError("click set is empty")
        return ClickSet(self.clicks[:-1])

    def positives(self) -> tuple[Click, ...]:
        return tuple(c for c in self.clicks if c.is_positive)

    def negatives(self) -> tuple[Click, ...]:
        return tuple(c for c in self.clicks if not c.is_positive)

    def __len__(self) -> int:
        return len(self.clicks)

    def __iter__(self):
        return iter(self.clicks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClickSet):
            return NotImplemented
        return self.clicks == other.clicks

    def __repr__(self) -> str:
        return f"ClickSet({len(self.clicks)} clicks)"


def _check_bounds(clicks: Sequence[Click], width: int, height: int) -> None:
    for c in clicks:
        if not (0 <= c.x < width and 0 <= c.y < height):
            raise ClickOutOfBoundsError(
                f"click ({c.x}, {c.y}) outside {width}x{height} image"
            )


def encode_gaussian(
    clicks: Sequence[Click],
    width: int,
    height: int,
    sigma: float = GAUSSIAN_SIGMA,
    clip_radius: float = GAUSSIAN_CLIP_RADIUS,
) -> np.ndarray:
    """Unit-peak Gaussian per click, max-combined, zero beyond clip_radius.

    Returns an all-zero channel for an empty click sequence.
    """
    _check_bounds(clicks, width, height)
    out = np.zeros((height, width), dtype=np.float64)
    r = int(np.ceil(clip_radius))
    clip_sq = clip_radius * clip_radius
    for c in clicks:
        x0, x1 = max(0, c.x - r), min(width, c.x + r + 1)
        y0, y1 = max(0, c.y - r), min(height, c.y + r + 1)
        ys = np.arange(y0, y1)[:, None] - c.y
        xs = np.arange(x0, x1)[None, :] - c.x
        d2 = (ys * ys + xs * xs).astype(np.float64)
        vals = np.where(d2 <= clip_sq, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
        np.maximum(out[y0:y1, x0:x1], vals, out=out[y0:y1, x0:x1])
    return out.astype(np.float32)


def encode_click_distance(
    clicks: Sequence[Click],
    width: int,
    height: int,
    truncation: float = DISTANCE_TRUNCATION,
) -> np.ndarray:
    """Truncated, normalized distance to the nearest click (iFCN-style).

    Distance saturates at `truncation` and is scaled into [0, 1]; with no
    clicks every pixel sits at the saturation value 1.0.
    """
    _check_bounds(clicks, width, height)
    if not clicks:
        return np.ones((height, width), dtype=np.float32)
    d2 = np.full((height, width), np.inf)
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    for c in clicks:
        np.minimum(d2, (ys - c.y) ** 2 + (xs - c.x) ** 2, out=d2)
    d = np.minimum(np.sqrt(d2), truncation) / truncation
    return d.astype(np.float32)


def encode_mask_channel(prev_mask: Bitmask, truncation: float = MASK_TRUNCATION) -> np.ndarray:
    """Signed truncated EDT of a previous mask, collapsed to [0, 1].

    Foreground pixels map to 0.5 + 0.5*min(d_bg, T)/T and background pixels
    to 0.5 - 0.5*min(d_fg, T)/T, so the 0.5 level set follows the mask edge.
    An empty mask encodes as the all-zero channel.
    """
    h, w = prev_mask.height, prev_mask.width
    if prev_mask.is_empty:
        return np.zeros((h, w), dtype=np.float32)
    fg = prev_mask.a
    d_bg = distance_transform(prev_mask, "background", border_is_background=True)
    d_fg = distance_transform(prev_mask, "foreground")
    out = np.where(
        fg,
        0.5 + 0.5 * np.minimum(d_bg, truncation) / truncation,
        0.5 - 0.5 * np.minimum(d_fg, truncation) / truncation,
    )
    return out.astype(np.float32)


@dataclass(frozen=True)
class GuidanceStack:
    """Predictor input: RGB in [0,1] plus click channels and optional mask channel."""

    rgb: np.ndarray                     # (H, W, 3) float32
    pos_channel: np.ndarray             # (H, W) float32
    neg_channel: np.ndarray             # (H, W) float32
    mask_channel: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        h, w = self.pos_channel.shape
        if self.rgb.shape != (h, w, 3):
            raise DimensionMismatchError(
                f"rgb shape {self.rgb.shape} does not match channels {h}x{w}"
            )
        if self.neg_channel.shape != (h, w):
            raise DimensionMismatchError("negative channel shape mismatch")
        if self.mask_channel is not None and self.mask_channel.shape != (h, w):
            raise DimensionMismatchError("mask channel shape mismatch")

    @property
    def width(self) -> int:
        return self.pos_channel.shape[1]

    @property
    def height(self) -> int:
        return self.pos_channel.shape[0]

    @property
    def channel_count(self) -> int:
        return 6 if self.mask_channel is not None else 5

    def channels(self) -> np.ndarray:
        """All channels stacked (C, H, W) float32, fixed R,G,B,pos,neg[,mask] order."""
        chans = [self.rgb[:, :, 0], self.rgb[:, :, 1], self.rgb[:, :, 2],
                 self.pos_channel, self.neg_channel]
        if self.mask_channel is not None:
            chans.append(self.mask_channel)
        return np.stack(chans).astype(np.float32)

    def to_bytes(self) -> bytes:
        """Flat binary tensor: magic, u32 LE width/height/channels, float32 data."""
        data = np.ascontiguousarray(self.channels(), dtype="<f4")
        header = GSTK_MAGIC + struct.pack("<III", self.width, self.height, self.channel_count)
        return header + data.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GuidanceStack":
        if blob[:5] != GSTK_MAGIC:
            raise ValueError("bad magic; not a GSTK1 tensor")
        if len(blob) < 17:
            raise ValueError("truncated GSTK1 header")
        w, h, c = struct.unpack("<III", blob[5:17])
        if c not in (5, 6):
            raise ValueError(f"channel count must be 5 or 6, got {c}")
        expected = 17 + 4 * c * h * w
        if len(blob) != expected:
            raise ValueError(f"payload length {len(blob)} != expected {expected}")
        data = np.frombuffer(blob, dtype="<f4", offset=17).reshape(c, h, w)
        rgb = np.stack([data[0], data[1], data[2]], axis=-1)
        mask = data[5].copy() if c == 6 else None
        return cls(rgb.copy(), data[3].copy(), data[4].copy(), mask)


def image_to_unit(image: np.ndarray) -> np.ndarray:
    """Normalize an (H, W, 3) image to float32 in [0, 1]; uint8 is scaled by 255."""
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    image = image[:, :, :3]
    if image.dtype == np.uint8:
        return (image / 255.0).astype(np.float32)
    out = image.astype(np.float32)
    if out.size and (out.min() < 0.0 or out.max() > 1.0):
        raise ValueError("float image values must lie in [0, 1]")
    return out


def assemble_stack(
    image: np.ndarray,
    clicks: ClickSet,
    prev_mask: Optional[Bitmask] = None,
    encoding: str = "gaussian",
) -> GuidanceStack:
    """Build the full input stack from an image, clicks, and optional mask."""
    if encoding not in ("gaussian", "distance"):
        raise ValueError(f"encoding must be 'gaussian' or 'distance', got {encoding!r}")
    rgb = image_to_unit(image)
    h, w = rgb.shape[:2]
    if prev_mask is not None and (prev_mask.height != h or prev_mask.width != w):
        raise DimensionMismatchError(
            f"mask {prev_mask.width}x{prev_mask.height} does not match image {w}x{h}"
        )
    encode = encode_gaussian if encoding == "gaussian" else encode_click_distance
    pos = encode(clicks.positives(), w, h)
    neg = encode(clicks.negatives(), w, h)
    mask_ch = encode_mask_channel(prev_mask) if prev_mask is not None else None
    return GuidanceStack(rgb, pos, neg, mask_ch)
