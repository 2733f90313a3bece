"""Operator command line: simulate, report, serve, encode.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Artifact files
embed the run parameters that affect results (the seed always included);
scheduling-only knobs like --jobs stay out so reruns are byte-comparable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import (
    EvaluationReport,
    curve_to_csv,
    load_dataset,
    read_traces,
    run_simulations,
    write_traces,
)
from .guidance import NEGATIVE, POSITIVE, ClickSet, assemble_stack
from .predictor import create_predictor
from .sampling import CORRECTION_SAMPLERS


def _parse_targets(text: str) -> list[float]:
    try:
        targets = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"targets must be comma-separated floats: {text!r}")
    if not targets or any(not 0.0 < t <= 1.0 for t in targets):
        raise argparse.ArgumentTypeError("every target IoU must lie in (0, 1]")
    return targets


def _parse_clicks(text: str) -> list[tuple[int, int, str]]:
    """Parse "x,y,+;x,y,-" into click triples."""
    polarity_map = {"+": POSITIVE, "-": NEGATIVE, "positive": POSITIVE, "negative": NEGATIVE}
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = [b.strip() for b in part.split(",")]
        if len(bits) != 3 or bits[2] not in polarity_map:
            raise argparse.ArgumentTypeError(
                f"bad click {part!r}; expected x,y,+ or x,y,- entries separated by ';'"
            )
        try:
            out.append((int(bits[0]), int(bits[1]), polarity_map[bits[2]]))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad click coordinates in {part!r}")
    if not out:
        raise argparse.ArgumentTypeError("no clicks given")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickseg",
        description="Interactive-segmentation engine: simulated annotation, "
                    "clicks@IoU reports, annotation service, encoding debug dumps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate annotation over a dataset")
    sim.add_argument("--dataset", required=True, help="dataset root directory")
    sim.add_argument("--layout", choices=("folder-pairs", "pascal-instances"),
                     default="folder-pairs")
    sim.add_argument("--predictor", default="builtin",
                     help="builtin, bridge:<command>, or tcp:<host>:<port>")
    sim.add_argument("--sampler", choices=sorted(CORRECTION_SAMPLERS),
                     default="iterative-largest")
    sim.add_argument("--mode", choices=("scratch", "refine"), default="scratch")
    sim.add_argument("--encoding", choices=("gaussian", "distance"), default="gaussian")
    sim.add_argument("--max-clicks", type=int, default=20)
    sim.add_argument("--seed", type=int, default=0, help="master seed (default 0, printed)")
    sim.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                     help="simulation work-pool size; does not affect results")
    sim.add_argument("--embed-masks", action="store_true",
                     help="embed per-round predicted masks (RLE) in the traces")
    sim.add_argument("--out", required=True, help="output directory for traces.jsonl")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="compute clicks@IoU metrics from traces")
    rep.add_argument("--traces", required=True, help="traces.jsonl from `simulate`")
    rep.add_argument("--targets", type=_parse_targets, default=[0.85, 0.90],
                     help="comma-separated target IoUs (default 0.85,0.90)")
    rep.add_argument("--out", required=True, help="output directory for report.json + curve.csv")
    rep.set_defaults(func=cmd_report)

    srv = sub.add_parser("serve", help="run the annotation HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8765)
    srv.add_argument("--predictor", default="builtin")
    srv.add_argument("--encoding", choices=("gaussian", "distance"), default="gaussian")
    srv.add_argument("--session-log", default=None, help="write-ahead click-log directory")
    srv.add_argument("--ui", default=None, help="static UI bundle directory to mount at /ui")
    srv.set_defaults(func=cmd_serve)

    enc = sub.add_parser("encode", help="dump guidance channels for debugging")
    enc.add_argument("--image", required=True)
    enc.add_argument("--clicks", type=_parse_clicks, required=True,
                     help='e.g. "30,40,+;50,60,-"')
    enc.add_argument("--encoding", choices=("gaussian", "distance"), default="gaussian")
    enc.add_argument("--mask", default=None, help="optional previous-mask PNG")
    enc.add_argument("--out", required=True)
    enc.set_defaults(func=cmd_encode)
    return parser


def _sim_spec(args) -> dict:
    return {
        "command": "simulate",
        "dataset": str(args.dataset),
        "layout": args.layout,
        "predictor": args.predictor,
        "sampler": args.sampler,
        "mode": args.mode,
        "encoding": args.encoding,
        "max_clicks": args.max_clicks,
        "seed": args.seed,
        "embed_masks": bool(args.embed_masks),
    }


def cmd_simulate(args) -> int:
    print(f"seed: {args.seed}")
    result = load_dataset(args.dataset, layout=args.layout)
    for issue in result.issues:
        print(f"dataset issue: {issue.path}: {issue.reason}", file=sys.stderr)
    if not result.instances:
        print("error: no usable instances in the dataset", file=sys.stderr)
        return 1
    predictor = create_predictor(args.predictor, args.encoding)
    try:
        traces = run_simulations(
            result.instances,
            predictor,
            sampler=args.sampler,
            mode=args.mode,
            encoding=args.encoding,
            max_clicks=args.max_clicks,
            master_seed=args.seed,
            jobs=max(1, args.jobs),
            include_masks=args.embed_masks,
        )
    finally:
        predictor.close()
    out = Path(args.out)
    write_traces(out / "traces.jsonl", traces, run_spec=_sim_spec(args))
    aborted = [t for t in traces if t.aborted]
    for t in aborted:
        print(f"aborted: {t.instance_id}: {t.aborted}", file=sys.stderr)
    print(f"simulated {len(traces)} instances "
          f"({len(aborted)} aborted, {len(result.issues)} dataset issues) -> {out / 'traces.jsonl'}")
    return 1 if aborted or result.issues else 0


def cmd_report(args) -> int:
    traces, sim_spec = read_traces(args.traces)
    if not traces:
        print("error: traces file contains no traces", file=sys.stderr)
        return 1
    report = EvaluationReport.from_traces(
        traces,
        args.targets,
        metadata={
            "command": "report",
            "targets": args.targets,
            "traces": str(args.traces),
            "simulate_spec": sim_spec,
            "instances": len(traces),
        },
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "curve.csv").write_text(curve_to_csv(report.curve), encoding="utf-8")
    for t in sorted(report.targets):
        row = report.targets[t]
        print(f"@{t:g}: {row['mean_clicks_per_object']:.2f} clicks/object, "
              f"uniform {row['uniform_clicks_display']}")
    print(f"wrote {out / 'report.json'} and {out / 'curve.csv'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        predictor_spec=args.predictor,
        encoding=args.encoding,
        session_log_dir=args.session_log,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _save_channel_png(channel: np.ndarray, path: Path) -> None:
    Image.fromarray(np.round(channel * 255.0).astype(np.uint8), mode="L").save(path)


def cmd_encode(args) -> int:
    from .raster import load_mask

    with Image.open(args.image) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    h, w = rgb.shape[:2]
    clicks = ClickSet()
    for x, y, polarity in args.clicks:
        clicks = clicks.with_click(x, y, polarity)
    prev = load_mask(args.mask) if args.mask else None
    stack = assemble_stack(rgb, clicks, prev_mask=prev, encoding=args.encoding)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_channel_png(stack.pos_channel, out / "channel_pos.png")
    _save_channel_png(stack.neg_channel, out / "channel_neg.png")
    if stack.mask_channel is not None:
        _save_channel_png(stack.mask_channel, out / "channel_mask.png")
    (out / "stack.gstk").write_bytes(stack.to_bytes())
    meta = {
        "command": "encode",
        "image": str(args.image),
        "encoding": args.encoding,
        "channels": stack.channel_count,
        "width": w,
        "height": h,
        "clicks": [{"x": x, "y": y, "polarity": p} for x, y, p in args.clicks],
    }
    (out / "encode.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {stack.channel_count}-channel stack dumps to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
