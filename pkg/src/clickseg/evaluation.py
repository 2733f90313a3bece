"""Dataset ingestion and the clicks-to-IoU evaluation protocols.

A simulation trace records, per round, the click placed on the current
error region and the IoU of the following prediction, up to the 20-click
budget. Two click-count methodologies are computed from traces: per-object
counts clipped at 20, and the uniform count at which the dataset-mean IoU
first reaches the target (possibly "not reached"). Traces are the source of
truth; every metric is a pure function of them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image

from .guidance import Click, ClickSet, assemble_stack
from .predictor import threshold
from .raster import Bitmask, MaskFileError, iou, load_mask, mask_from_rle, mask_to_rle
from .sampling import InstanceTruth, get_sampler
from .simloop import derive_instance_seed

logger = logging.getLogger(__name__)

MAX_CLICKS = 20          # evaluation budget per object
CLIP_CLICKS = 20         # per-object methodology clips unreached targets here
PASCAL_VOID = 255        # paletted id conventionally marking void regions

LAYOUTS = ("folder-pairs", "pascal-instances")


@dataclass(frozen=True)
class DatasetInstance:
    """One evaluation instance: image on disk, masks in memory."""

    instance_id: str
    image_path: Path
    gt: Bitmask
    negative_objects: tuple[Bitmask, ...] = ()
    initial_mask: Optional[Bitmask] = None

    def load_image(self) -> np.ndarray:
        with Image.open(self.image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        if rgb.shape[:2] != self.gt.a.shape:
            raise MaskFileError(
                f"{self.image_path}: image {rgb.shape[1]}x{rgb.shape[0]} does not match "
                f"mask {self.gt.width}x{self.gt.height}"
            )
        return rgb

    def truth(self) -> InstanceTruth:
        return InstanceTruth(self.gt, self.negative_objects)


@dataclass(frozen=True)
class LoadIssue:
    path: str
    reason: str


@dataclass
class LoadResult:
    instances: list[DatasetInstance]
    issues: list[LoadIssue]


def _image_files(images_dir: Path) -> list[Path]:
    files = [p for p in sorted(images_dir.iterdir())
             if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
    return files


def load_dataset(root, layout: str = "folder-pairs") -> LoadResult:
    """Load instances from `root` in one of the two directory layouts.

    folder-pairs: images/X.{png,jpg} paired with binary masks/X.png and an
    optional initial/X.png refinement mask.
    pascal-instances: masks/X.png is paletted; every id except 0 and 255
    becomes one instance, with the image's other ids as negative objects.

    Per-file problems (missing or undecodable masks, empty objects) are
    collected as issues; the remaining instances still load.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain images/ and masks/ directories")

    instances: list[DatasetInstance] = []
    issues: list[LoadIssue] = []
    for image_path in _image_files(images_dir):
        mask_path = masks_dir / (image_path.stem + ".png")
        if not mask_path.exists():
            issues.append(LoadIssue(str(mask_path), "mask file missing"))
            continue
        if layout == "folder-pairs":
            try:
                gt = load_mask(mask_path)
            except MaskFileError as e:
                issues.append(LoadIssue(str(mask_path), str(e)))
                continue
            if gt.is_empty:
                issues.append(LoadIssue(str(mask_path), "empty ground-truth mask"))
                logger.warning("skipping %s: empty ground-truth mask", mask_path)
                continue
            initial = None
            initial_path = root / "initial" / (image_path.stem + ".png")
            if initial_path.exists():
                initial = load_mask(initial_path)
            instances.append(DatasetInstance(image_path.stem, image_path, gt,
                                             initial_mask=initial))
        else:
            try:
                with Image.open(mask_path) as img:
                    if img.mode not in ("P", "L"):
                        raise MaskFileError(f"{mask_path}: instance masks must be paletted")
                    arr = np.asarray(img)
            except MaskFileError as e:
                issues.append(LoadIssue(str(mask_path), str(e)))
                continue
            except OSError as e:
                issues.append(LoadIssue(str(mask_path), f"cannot read: {e}"))
                continue
            ids = [int(v) for v in np.unique(arr) if v not in (0, PASCAL_VOID)]
            if not ids:
                issues.append(LoadIssue(str(mask_path), "no instance ids in mask"))
                logger.warning("skipping %s: no instance ids", mask_path)
                continue
            for inst_id in ids:
                gt = Bitmask(arr == inst_id)
                negatives = tuple(Bitmask(arr == other) for other in ids if other != inst_id)
                instances.append(
                    DatasetInstance(f"{image_path.stem}#{inst_id}", image_path, gt,
                                    negative_objects=negatives)
                )
    return LoadResult(instances, issues)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    click: Click
    iou: float
    mask_rle: Optional[str] = None


@dataclass(frozen=True)
class SimulationTrace:
    """Per-instance simulation outcome; rounds are contiguous from 1."""

    instance_id: str
    rounds: tuple[RoundRecord, ...]
    mode: str = "scratch"
    sampler: str = "iterative-largest"
    seed: int = 0
    initial_iou: Optional[float] = None
    aborted: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.rounds) > MAX_CLICKS:
            raise ValueError(f"trace has {len(self.rounds)} rounds; budget is {MAX_CLICKS}")
        for i, rec in enumerate(self.rounds, start=1):
            if rec.round != i:
                raise ValueError("round indices must be contiguous from 1")

    def iou_at(self, k: int) -> float:
        """IoU after k clicks, carrying the final value forward for
        early-terminated traces. Before any click, the refine-mode initial
        IoU (or 0.0) applies."""
        if k < 0:
            raise ValueError("click count must be >= 0")
        if k == 0 or not self.rounds:
            return self.initial_iou if self.initial_iou is not None else 0.0
        return self.rounds[min(k, len(self.rounds)) - 1].iou


def simulate_instance(
    predictor,
    instance: DatasetInstance,
    sampler: str | Callable = "iterative-largest",
    max_clicks: int = MAX_CLICKS,
    mode: str = "scratch",
    encoding: str = "gaussian",
    seed: int = 0,
    include_masks: bool = False,
) -> SimulationTrace:
    """Simulate an annotator on one instance.

    Scratch mode starts from the empty prediction; refine mode starts from
    the instance's initial mask, which is also fed through the mask channel.
    Each round places one click on the current error region, re-encodes the
    guidance, predicts, thresholds, and records the IoU. The loop stops
    early only when the prediction matches the ground truth exactly; a
    predictor failure aborts the trace with the partial rounds kept.
    """
    if mode not in ("scratch", "refine"):
        raise ValueError(f"mode must be 'scratch' or 'refine', got {mode!r}")
    if max_clicks > MAX_CLICKS:
        raise ValueError(f"max_clicks cannot exceed the {MAX_CLICKS}-click budget")
    sampler_name = sampler if isinstance(sampler, str) else getattr(sampler, "__name__", "custom")
    sample = get_sampler(sampler) if isinstance(sampler, str) else sampler

    image = instance.load_image()
    gt = instance.gt
    rng = np.random.default_rng(seed)

    initial_iou = None
    if mode == "refine":
        if instance.initial_mask is None:
            raise ValueError(f"{instance.instance_id}: refine mode needs an initial mask")
        prev = instance.initial_mask
        initial_iou = iou(prev, gt)
        if not predictor.descriptor.uses_mask_channel:
            logger.warning(
                "predictor %s ignores the mask channel; refinement input will not "
                "reach it", predictor.descriptor.kind,
            )
    else:
        prev = Bitmask.empty(gt.width, gt.height)

    clicks = ClickSet()
    rounds: list[RoundRecord] = []
    aborted = None
    for rnd in range(1, max_clicks + 1):
        click = sample(prev, gt, clicks, rng)
        if click is None:
            break
        clicks = ClickSet(clicks.clicks + (click,))
        stack = assemble_stack(
            image, clicks, prev_mask=prev if mode == "refine" else None, encoding=encoding
        )
        try:
            p = predictor.predict(stack)
        except Exception as e:  # predictor failure: keep the partial trace
            aborted = f"{type(e).__name__}: {e}"
            break
        mask = threshold(p)
        rounds.append(
            RoundRecord(rnd, click, iou(mask, gt),
                        mask_to_rle(mask) if include_masks else None)
        )
        prev = mask
    return SimulationTrace(
        instance_id=instance.instance_id,
        rounds=tuple(rounds),
        mode=mode,
        sampler=sampler_name,
        seed=seed,
        initial_iou=initial_iou,
        aborted=aborted,
    )


def run_simulations(
    instances: Sequence[DatasetInstance],
    predictor,
    sampler: str = "iterative-largest",
    mode: str = "scratch",
    encoding: str = "gaussian",
    max_clicks: int = MAX_CLICKS,
    master_seed: int = 0,
    jobs: int = 1,
    include_masks: bool = False,
) -> list[SimulationTrace]:
    """Simulate every instance; per-instance seeds derive from the master
    seed and the instance id, so results do not depend on `jobs`."""
    def one(inst: DatasetInstance) -> SimulationTrace:
        seed = derive_instance_seed(master_seed, inst.instance_id)
        return simulate_instance(
            predictor, inst, sampler=sampler, max_clicks=max_clicks, mode=mode,
            encoding=encoding, seed=seed, include_masks=include_masks,
        )

    if jobs <= 1:
        return [one(inst) for inst in instances]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, instances))


def clicks_to_reach(trace: SimulationTrace, target: float) -> int:
    """Smallest click count reaching the target IoU, clipped to 20."""
    for k in range(1, MAX_CLICKS + 1):
        if trace.iou_at(k) >= target:
            return k
    return CLIP_CLICKS


def mean_clicks_per_object(traces: Sequence[SimulationTrace], target: float) -> float:
    """Per-object methodology: mean of the clipped per-instance click counts."""
    if not traces:
        raise ValueError("no traces")
    return float(np.mean([clicks_to_reach(t, target) for t in traces]))


def uniform_clicks_to_reach(traces: Sequence[SimulationTrace], target: float) -> Optional[int]:
    """Whole-set methodology: smallest k where the mean IoU at k clicks
    reaches the target; None means not reached within the budget."""
    if not traces:
        raise ValueError("no traces")
    for k in range(1, MAX_CLICKS + 1):
        if float(np.mean([t.iou_at(k) for t in traces])) >= target:
            return k
    return None


def miou_curve(traces: Sequence[SimulationTrace]) -> list[float]:
    """Mean IoU against click count, one point per k in 1..20; traces that
    terminated early carry their final IoU forward."""
    if not traces:
        raise ValueError("no traces")
    return [float(np.mean([t.iou_at(k) for t in traces])) for k in range(1, MAX_CLICKS + 1)]


@dataclass
class EvaluationReport:
    """clicks@IoU under both methodologies plus the mIoU curve."""

    targets: dict[float, dict]
    curve: list[float]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_traces(
        cls, traces: Sequence[SimulationTrace], targets: Sequence[float],
        metadata: Optional[dict] = None,
    ) -> "EvaluationReport":
        for t in targets:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"target IoU {t} outside (0, 1]")
        per_target = {}
        for t in targets:
            uniform = uniform_clicks_to_reach(traces, t)
            per_target[t] = {
                "mean_clicks_per_object": mean_clicks_per_object(traces, t),
                "uniform_clicks": uniform,
                "uniform_clicks_display": str(uniform) if uniform is not None else ">20",
            }
        return cls(targets=per_target, curve=miou_curve(traces),
                   metadata=dict(metadata or {}))

    def to_json(self) -> str:
        payload = {
            "targets": {f"{t:g}": v for t, v in sorted(self.targets.items())},
            "miou_curve": self.curve,
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def curve_to_csv(curve: Sequence[float]) -> str:
    lines = ["k,miou"]
    lines += [f"{k},{v}" for k, v in enumerate(curve, start=1)]
    return "\n".join(lines) + "\n"


def _click_to_json(c: Click) -> dict:
    return {"x": c.x, "y": c.y, "polarity": c.polarity}


def write_traces(path, traces: Sequence[SimulationTrace], run_spec: Optional[dict] = None) -> None:
    """Line-delimited JSON: a run header, then per trace a start line, one
    line per round, and an end line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"type": "run", "spec": run_spec or {}}, sort_keys=True) + "\n")
        for t in traces:
            head = {
                "type": "trace",
                "instance": t.instance_id,
                "mode": t.mode,
                "sampler": t.sampler,
                "seed": t.seed,
                "initial_iou": t.initial_iou,
            }
            f.write(json.dumps(head, sort_keys=True) + "\n")
            for rec in t.rounds:
                row = {
                    "type": "round",
                    "instance": t.instance_id,
                    "round": rec.round,
                    "click": _click_to_json(rec.click),
                    "iou": rec.iou,
                }
                if rec.mask_rle is not None:
                    row["mask"] = rec.mask_rle
                f.write(json.dumps(row, sort_keys=True) + "\n")
            f.write(json.dumps({"type": "trace_end", "instance": t.instance_id,
                                "aborted": t.aborted}, sort_keys=True) + "\n")


class TraceFormatError(ValueError):
    """traces.jsonl content does not follow the trace schema."""


def read_traces(path) -> tuple[list[SimulationTrace], dict]:
    """Parse a traces.jsonl file back into traces plus the run header."""
    path = Path(path)
    traces: list[SimulationTrace] = []
    run_spec: dict = {}
    open_trace: Optional[dict] = None
    rounds: list[RoundRecord] = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"{path}:{lineno}: not JSON: {e}") from e
            kind = rec.get("type")
            if kind == "run":
                run_spec = rec.get("spec", {})
            elif kind == "trace":
                if open_trace is not None:
                    raise TraceFormatError(f"{path}:{lineno}: trace started inside a trace")
                open_trace = rec
                rounds = []
            elif kind == "round":
                if open_trace is None:
                    raise TraceFormatError(f"{path}:{lineno}: round outside a trace")
                click = Click(rec["click"]["x"], rec["click"]["y"],
                              rec["click"]["polarity"], rec["round"] - 1)
                rounds.append(RoundRecord(rec["round"], click, rec["iou"],
                                          rec.get("mask")))
            elif kind == "trace_end":
                if open_trace is None:
                    raise TraceFormatError(f"{path}:{lineno}: trace_end outside a trace")
                traces.append(SimulationTrace(
                    instance_id=open_trace["instance"],
                    rounds=tuple(rounds),
                    mode=open_trace.get("mode", "scratch"),
                    sampler=open_trace.get("sampler", "iterative-largest"),
                    seed=open_trace.get("seed", 0),
                    initial_iou=open_trace.get("initial_iou"),
                    aborted=rec.get("aborted"),
                ))
                open_trace = None
            else:
                raise TraceFormatError(f"{path}:{lineno}: unknown record type {kind!r}")
    if open_trace is not None:
        raise TraceFormatError(f"{path}: unterminated trace {open_trace.get('instance')!r}")
    return traces, run_spec


def round_mask(rec: RoundRecord) -> Bitmask:
    """Decode the RLE-embedded predicted mask of a round record."""
    if rec.mask_rle is None:
        raise ValueError("trace was written without embedded masks")
    return mask_from_rle(rec.mask_rle)
