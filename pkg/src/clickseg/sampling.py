"""Simulated-annotator click generation.

Three families live here: initial sampling (positives on the object,
negatives via one of three background strategies), the error-driven
correction click that targets the largest misclassified cluster, and the
two alternative correction samplers (size-proportional cluster choice and
uniform-random error pixel) used to probe sampler robustness.

Every sampler takes an explicit numpy Generator; identical seeds and inputs
give identical clicks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .guidance import NEGATIVE, POSITIVE, Click, ClickSet
from .raster import (
    Bitmask,
    DimensionMismatchError,
    boundary,
    connected_components,
    distance_transform,
)

RELAXATION_STEPS = 4  # boundary-margin halvings before the deepest-point fallback


class EmptyObjectError(ValueError):
    """Initial sampling requested for an empty ground-truth object."""


@dataclass(frozen=True)
class InitialSamplingParams:
    """Hyperparameters of the initial click sampling strategies."""

    max_positive: int = 5          # upper bound of the uniform positive count
    boundary_margin: float = 5.0   # min distance of a click from the object boundary
    click_spacing: float = 40.0    # min pairwise distance between sampled clicks
    outer_band: float = 40.0       # max distance from the object for negatives
    max_negative_s1: int = 10
    max_negative_s2: int = 5
    coverage_clicks_s3: int = 10

    def __post_init__(self) -> None:
        for name in ("max_positive", "boundary_margin", "click_spacing",
                     "outer_band", "max_negative_s1", "max_negative_s2",
                     "coverage_clicks_s3"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.boundary_margin >= self.outer_band:
            raise ValueError("boundary_margin must be smaller than outer_band")


class InstanceTruth:
    """Target object plus any other labelled instances in the same image.

    Caches the distance maps the samplers share, so repeated draws on the
    same truth do not recompute transforms.
    """

    def __init__(self, gt: Bitmask, negative_objects: Sequence[Bitmask] = ()) -> None:
        if gt.is_empty:
            raise EmptyObjectError("ground-truth object is empty")
        for obj in negative_objects:
            if obj.a.shape != gt.a.shape:
                raise DimensionMismatchError("negative object dimensions differ from gt")
            if (obj.a & gt.a).any():
                raise ValueError("negative object overlaps the ground-truth object")
        self.gt = gt
        self.negative_objects = tuple(negative_objects)

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance of every pixel to the object's boundary pixel set."""
        return distance_transform(boundary(self.gt), "foreground")

    @cached_property
    def object_distance(self) -> np.ndarray:
        """Distance of every pixel to the nearest object pixel."""
        return distance_transform(self.gt, "foreground")


@dataclass(frozen=True)
class InitialSample:
    """Result of one full initial-sampling draw."""

    clicks: ClickSet
    negative_strategy: str


def _draw_spaced(
    eligible: np.ndarray,
    count: int,
    spacing: float,
    rng: np.random.Generator,
    taken: Sequence[tuple[int, int]] = (),
) -> list[tuple[int, int]]:
    """Draw up to `count` pixels uniformly from `eligible`, keeping every
    drawn pixel at least `spacing` away from all other drawn/taken pixels.

    Each draw is uniform over the subset of eligible pixels still satisfying
    the spacing constraint (the limit distribution of rejection sampling,
    without its failure modes). Spacing is a hard constraint: when the
    feasible subset empties before `count` is reached, the picks so far are
    returned rather than relaxing the spacing.
    """
    h, w = eligible.shape
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    s2 = spacing * spacing

    def knockout(base: np.ndarray, points) -> np.ndarray:
        out = base.copy()
        for px, py in points:
            out &= ((ys - py) ** 2 + (xs - px) ** 2) >= s2
        return out

    picks: list[tuple[int, int]] = []
    feasible = knockout(eligible, taken)
    while len(picks) < count and feasible.any():
        flat = np.flatnonzero(feasible)
        j = int(flat[rng.integers(len(flat))])
        y, x = divmod(j, w)
        picks.append((x, y))
        feasible = knockout(feasible, [(x, y)])
    return picks


def _deepest_point(mask: Bitmask, rng: np.random.Generator) -> tuple[int, int]:
    """Interior point maximizing distance to the mask complement."""
    depth = distance_transform(mask, "background", border_is_background=True)
    depth[~mask.a] = -1.0
    best = depth.max()
    ty, tx = np.nonzero(depth == best)
    i = int(rng.integers(len(ty)))
    return int(tx[i]), int(ty[i])


def sample_positive_initial(
    truth: InstanceTruth,
    params: InitialSamplingParams,
    rng: np.random.Generator,
) -> list[Click]:
    """Positive clicks on the object, spaced apart and away from its boundary.

    The click count is uniform in [1, max_positive]. If the margin leaves no
    eligible pixel it is halved up to RELAXATION_STEPS times; failing that, a
    single click at the object's deepest interior point is returned, so tiny
    objects always get one positive click.
    """
    n_target = int(rng.integers(1, params.max_positive + 1))
    margin = params.boundary_margin
    eligible = None
    for _ in range(RELAXATION_STEPS + 1):
        cand = truth.gt.a & (truth.boundary_distance >= margin)
        if cand.any():
            eligible = cand
            break
        margin /= 2.0
    if eligible is None:
        x, y = _deepest_point(truth.gt, rng)
        return [Click(x, y, POSITIVE, 0)]
    picks = _draw_spaced(eligible, n_target, params.click_spacing, rng)
    if not picks:  # unreachable given a nonempty eligible set; belt and braces
        picks = [_deepest_point(truth.gt, rng)]
    return [Click(x, y, POSITIVE, i) for i, (x, y) in enumerate(picks)]


def sample_negative_initial(
    truth: InstanceTruth,
    strategy: str,
    params: InitialSamplingParams,
    rng: np.random.Generator,
) -> list[Click]:
    """Negative clicks via one of the three background strategies.

    s1: up to max_negative_s1 background clicks inside the distance band
        [boundary_margin, outer_band] around the object, spaced apart.
    s2: up to max_negative_s2 clicks on each negative object, at least
        boundary_margin away from the target object, spaced apart.
    s3: coverage_clicks_s3 clicks chosen by greedy farthest-point selection
        from the same band, spreading around the object outline.

    An empty band or no negative objects yields an empty list.
    """
    gt = truth.gt
    odist = truth.object_distance
    band = (~gt.a) & (odist >= params.boundary_margin) & (odist <= params.outer_band)

    if strategy == "s1":
        n = int(rng.integers(0, params.max_negative_s1 + 1))
        if n == 0 or not band.any():
            return []
        picks = _draw_spaced(band, n, params.click_spacing, rng)
    elif strategy == "s2":
        n = int(rng.integers(0, params.max_negative_s2 + 1))
        picks = []
        if n > 0:
            for obj in truth.negative_objects:
                eligible = obj.a & (odist >= params.boundary_margin)
                if not eligible.any():
                    continue
                picks.extend(_draw_spaced(eligible, n, params.click_spacing, rng, taken=picks))
    elif strategy == "s3":
        picks = _farthest_point_picks(band, params.coverage_clicks_s3, rng)
    else:
        raise ValueError(f"unknown negative strategy {strategy!r}")
    return [Click(x, y, NEGATIVE, i) for i, (x, y) in enumerate(picks)]


def _farthest_point_picks(
    band: np.ndarray, count: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Greedy farthest-point selection over the band pixels."""
    by, bx = np.nonzero(band)
    n_pixels = len(by)
    if n_pixels == 0:
        return []
    first = int(rng.integers(n_pixels))
    chosen = [first]
    mind = np.sqrt(((by - by[first]) ** 2 + (bx - bx[first]) ** 2).astype(np.float64))
    while len(chosen) < min(count, n_pixels):
        best = mind.max()
        ties = np.flatnonzero(mind == best)
        nxt = int(ties[rng.integers(len(ties))])
        chosen.append(nxt)
        np.minimum(
            mind,
            np.sqrt(((by - by[nxt]) ** 2 + (bx - bx[nxt]) ** 2).astype(np.float64)),
            out=mind,
        )
    return [(int(bx[i]), int(by[i])) for i in chosen]


NEGATIVE_STRATEGIES = ("s1", "s2", "s3")


def sample_initial_clicks(
    truth: InstanceTruth,
    params: InitialSamplingParams,
    rng: np.random.Generator,
) -> InitialSample:
    """Full initial draw: positives plus one uniformly-chosen negative strategy."""
    positives = sample_positive_initial(truth, params, rng)
    strategy = NEGATIVE_STRATEGIES[int(rng.integers(len(NEGATIVE_STRATEGIES)))]
    negatives = sample_negative_initial(truth, strategy, params, rng)
    base = len(positives)
    clicks = list(positives) + [
        Click(c.x, c.y, NEGATIVE, base + i) for i, c in enumerate(negatives)
    ]
    return InitialSample(ClickSet(clicks), strategy)


def _maximin_point(
    cluster: np.ndarray, existing: ClickSet, rng: np.random.Generator
) -> tuple[int, int]:
    """Cluster pixel maximizing min(distance to the cluster's complement,
    distance to the nearest prior click inside the cluster).

    The one-pixel ring outside the image counts as complement, so clusters
    touching (or filling) the frame stay well-defined. Ties break uniformly
    at random.
    """
    h, w = cluster.shape
    cy, cx = np.nonzero(cluster)
    y0, y1 = max(0, int(cy.min()) - 1), min(h, int(cy.max()) + 2)
    x0, x1 = max(0, int(cx.min()) - 1), min(w, int(cx.max()) + 2)
    sub = cluster[y0:y1, x0:x1]
    score = distance_transform(Bitmask(sub), "background", border_is_background=True)
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    for c in existing:
        if cluster[c.y, c.x]:
            d = np.sqrt(((ys - c.y) ** 2 + (xs - c.x) ** 2).astype(np.float64))
            np.minimum(score, d, out=score)
    score[~sub] = -1.0
    best = score.max()
    ty, tx = np.nonzero(score == best)
    i = int(rng.integers(len(ty)))
    return int(tx[i]) + x0, int(ty[i]) + y0


def _polarity_at(gt: Bitmask, x: int, y: int) -> str:
    return POSITIVE if gt.a[y, x] else NEGATIVE


def next_correction_click(
    pred: Bitmask,
    gt: Bitmask,
    existing: ClickSet,
    rng: np.random.Generator,
    connectivity: int = 4,
) -> Optional[Click]:
    """Correction click on the largest misclassified cluster, or None if the
    prediction already matches the ground truth.

    The click lands at the cluster pixel farthest from both the cluster
    edge and any prior clicks inside the same cluster (maximin); its
    polarity is positive exactly when the pixel belongs to the object.
    """
    err = pred ^ gt
    if err.is_empty:
        return None
    lm = connected_components(err, connectivity)
    largest = int(np.argmax(lm.sizes())) + 1  # first max = raster-order tie-break
    cluster = lm.labels == largest
    x, y = _maximin_point(cluster, existing, rng)
    return Click(x, y, _polarity_at(gt, x, y), existing.next_round)


def next_click_cluster_sampling(
    pred: Bitmask,
    gt: Bitmask,
    existing: ClickSet,
    rng: np.random.Generator,
    connectivity: int = 4,
) -> Optional[Click]:
    """Correction click with cluster chosen proportionally to its pixel count,
    placed at the chosen cluster's center (its deepest interior point)."""
    err = pred ^ gt
    if err.is_empty:
        return None
    lm = connected_components(err, connectivity)
    sizes = lm.sizes()
    label = 1 + int(rng.choice(lm.count, p=sizes / sizes.sum()))
    cluster = lm.labels == label
    x, y = _maximin_point(cluster, ClickSet(), rng)
    return Click(x, y, _polarity_at(gt, x, y), existing.next_round)


def next_click_random(
    pred: Bitmask,
    gt: Bitmask,
    existing: ClickSet,
    rng: np.random.Generator,
    connectivity: int = 4,
) -> Optional[Click]:
    """Correction click drawn uniformly from the whole misclassified region."""
    err = (pred ^ gt).a
    if not err.any():
        return None
    flat = np.flatnonzero(err)
    j = int(flat[rng.integers(len(flat))])
    y, x = divmod(j, err.shape[1])
    return Click(int(x), int(y), _polarity_at(gt, x, y), existing.next_round)


CORRECTION_SAMPLERS = {
    "iterative-largest": next_correction_click,
    "cluster": next_click_cluster_sampling,
    "random": next_click_random,
}


def get_sampler(name: str):
    try:
        return CORRECTION_SAMPLERS[name]
    except KeyError:
        raise ValueError(
            f"unknown sampler {name!r}; choose from {sorted(CORRECTION_SAMPLERS)}"
        ) from None
