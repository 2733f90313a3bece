"""Pluggable segmentation predictors: probability-map contract, thresholding,
and the builtin nearest-click classifier used for desk-scale runs.

A predictor consumes a GuidanceStack and returns an (H, W) float32
foreground-posterior grid in [0, 1]. The builtin predictor recovers click
pixels from the click channels themselves (unit peaks for the Gaussian
encoding, exact zeros for the distance encoding), so it honors exactly the
same input contract as an external model behind the bridge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guidance import Click, ClickSet, GuidanceStack
from .raster import Bitmask


@dataclass(frozen=True)
class PredictorDescriptor:
    """What the harness needs to know about a predictor."""

    kind: str
    uses_mask_channel: bool
    concurrency_safe: bool
    endpoint: str = ""

    def __post_init__(self) -> None:
        if self.kind == "external-bridge" and not self.endpoint:
            raise ValueError("external bridge descriptor requires an endpoint")


def threshold(p: np.ndarray, t: float = 0.5) -> Bitmask:
    """Binarize a probability map; foreground strictly above t."""
    return Bitmask(np.asarray(p) > t)


def builtin_nearest_click_predict(clicks: ClickSet, width: int, height: int) -> np.ndarray:
    """Voronoi classification by the nearest click.

    A pixel is foreground iff its nearest click is positive; exact distance
    ties go to the negative click (background bias). No clicks at all means
    an all-background map.
    """
    p = np.zeros((height, width), dtype=np.float32)
    if len(clicks) == 0:
        return p
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    inf = np.iinfo(np.int64).max
    dpos = np.full((height, width), inf, dtype=np.int64)
    dneg = np.full((height, width), inf, dtype=np.int64)
    for c in clicks:
        d2 = (ys - c.y) ** 2 + (xs - c.x) ** 2
        if c.is_positive:
            np.minimum(dpos, d2, out=dpos)
        else:
            np.minimum(dneg, d2, out=dneg)
    p[dpos < dneg] = 1.0
    return p


def _clicks_from_channel(channel: np.ndarray, polarity: str, encoding: str) -> list[Click]:
    if encoding == "gaussian":
        ys, xs = np.nonzero(channel == 1.0)
    else:  # distance: saturated channel means no clicks, zeros are clicks
        if (channel == 1.0).all():
            return []
        ys, xs = np.nonzero(channel == 0.0)
    return [Click(int(x), int(y), polarity, i) for i, (x, y) in enumerate(zip(xs, ys))]


class NearestClickPredictor:
    """Builtin desk-scale predictor; deterministic and thread-safe.

    It ignores the mask channel (the descriptor advertises this so the
    harness can warn in refinement mode).
    """

    def __init__(self, encoding: str = "gaussian") -> None:
        if encoding not in ("gaussian", "distance"):
            raise ValueError(f"encoding must be 'gaussian' or 'distance', got {encoding!r}")
        self.encoding = encoding
        self.descriptor = PredictorDescriptor(
            kind="builtin-nearest-click",
            uses_mask_channel=False,
            concurrency_safe=True,
        )

    def predict(self, stack: GuidanceStack) -> np.ndarray:
        pos = _clicks_from_channel(stack.pos_channel, "positive", self.encoding)
        neg = _clicks_from_channel(stack.neg_channel, "negative", self.encoding)
        clicks = list(pos) + [Click(c.x, c.y, c.polarity, len(pos) + i) for i, c in enumerate(neg)]
        return builtin_nearest_click_predict(ClickSet(clicks), stack.width, stack.height)

    def close(self) -> None:
        pass


def create_predictor(spec: str, encoding: str = "gaussian", timeout: float = 30.0):
    """Instantiate a predictor from its CLI/service descriptor string.

    Accepted forms: "builtin", "bridge:<command line>" (subprocess) and
    "tcp:<host>:<port>".
    """
    if spec == "builtin":
        return NearestClickPredictor(encoding)
    if spec.startswith("bridge:"):
        from .bridge import BridgePredictor, SubprocessTransport

        return BridgePredictor(SubprocessTransport(spec[len("bridge:"):]), timeout=timeout)
    if spec.startswith("tcp:"):
        from .bridge import BridgePredictor, TcpTransport

        rest = spec[len("tcp:"):]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp endpoint {rest!r}; expected host:port")
        return BridgePredictor(TcpTransport(host, int(port)), timeout=timeout)
    raise ValueError(f"unknown predictor {spec!r}; use builtin, bridge:<cmd> or tcp:<host>:<port>")
