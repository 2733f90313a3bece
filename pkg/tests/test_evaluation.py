import numpy as np
import pytest
from PIL import Image

from clickseg.evaluation import (
    EvaluationReport,
    RoundRecord,
    SimulationTrace,
    TraceFormatError,
    clicks_to_reach,
    curve_to_csv,
    load_dataset,
    mean_clicks_per_object,
    miou_curve,
    read_traces,
    round_mask,
    run_simulations,
    simulate_instance,
    uniform_clicks_to_reach,
    write_traces,
)
from clickseg.guidance import Click
from clickseg.predictor import NearestClickPredictor
from clickseg.raster import Bitmask, save_mask


def write_image(path, w, h, value=128):
    arr = np.full((h, w, 3), value, dtype=np.uint8)
    Image.fromarray(arr).save(path)


def make_folder_pairs(root, masks, initial=None):
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    for stem, m in masks.items():
        write_image(root / "images" / f"{stem}.png", m.width, m.height)
        save_mask(m, root / "masks" / f"{stem}.png")
    if initial:
        (root / "initial").mkdir()
        for stem, m in initial.items():
            save_mask(m, root / "initial" / f"{stem}.png")
    return root


def make_pascal(root, images):
    """images: {stem: int array with instance ids}."""
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    for stem, arr in images.items():
        h, w = arr.shape
        write_image(root / "images" / f"{stem}.png", w, h)
        img = Image.fromarray(arr.astype(np.uint8), mode="P")
        img.putpalette([0, 0, 0, 128, 0, 0, 0, 128, 0, 0, 0, 128] + [0] * 756)
        img.save(root / "masks" / f"{stem}.png")
    return root


def square_mask(w=101, h=101, side=41):
    bits = np.zeros((h, w), dtype=bool)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    bits[y0:y0 + side, x0:x0 + side] = True
    return Bitmask(bits)


def trace_from_ious(instance_id, ious, initial_iou=None):
    rounds = tuple(
        RoundRecord(i + 1, Click(0, 0, "positive", i), v) for i, v in enumerate(ious)
    )
    return SimulationTrace(instance_id=instance_id, rounds=rounds, initial_iou=initial_iou)


class TestLoadDataset:
    def test_folder_pairs(self, tmp_path):
        m = square_mask(50, 40, 11)
        result = load_dataset(make_folder_pairs(tmp_path / "d", {"a": m, "b": m}))
        assert [i.instance_id for i in result.instances] == ["a", "b"]
        assert not result.issues
        assert result.instances[0].gt == m
        assert result.instances[0].load_image().shape == (40, 50, 3)

    def test_pascal_instances_with_negatives(self, tmp_path):
        arr = np.zeros((30, 30), dtype=np.uint8)
        arr[2:10, 2:10] = 1
        arr[15:25, 15:25] = 2
        root = make_pascal(tmp_path / "d", {"x": arr, "y": arr})
        result = load_dataset(root, layout="pascal-instances")
        assert len(result.instances) == 4
        for inst in result.instances:
            assert len(inst.negative_objects) == 1
            assert not (inst.negative_objects[0].a & inst.gt.a).any()
        ids = sorted(i.instance_id for i in result.instances)
        assert ids == ["x#1", "x#2", "y#1", "y#2"]

    def test_pascal_void_ignored(self, tmp_path):
        arr = np.zeros((20, 20), dtype=np.uint8)
        arr[2:8, 2:8] = 1
        arr[10:12, 10:12] = 255  # void ring, not an instance
        root = make_pascal(tmp_path / "d", {"x": arr})
        result = load_dataset(root, layout="pascal-instances")
        assert [i.instance_id for i in result.instances] == ["x#1"]
        assert result.instances[0].negative_objects == ()

    def test_missing_mask_recorded_others_load(self, tmp_path):
        m = square_mask(30, 30, 9)
        root = make_folder_pairs(tmp_path / "d", {"a": m, "b": m})
        (root / "masks" / "b.png").unlink()
        result = load_dataset(root)
        assert [i.instance_id for i in result.instances] == ["a"]
        assert len(result.issues) == 1
        assert "missing" in result.issues[0].reason

    def test_empty_mask_skipped_with_issue(self, tmp_path):
        root = make_folder_pairs(
            tmp_path / "d", {"a": square_mask(20, 20, 5), "z": Bitmask.empty(20, 20)}
        )
        result = load_dataset(root)
        assert [i.instance_id for i in result.instances] == ["a"]
        assert any("empty" in iss.reason for iss in result.issues)

    def test_corrupt_mask_recorded(self, tmp_path):
        root = make_folder_pairs(tmp_path / "d", {"a": square_mask(20, 20, 5)})
        (root / "masks" / "a.png").write_bytes(b"\x89PNG garbage")
        result = load_dataset(root)
        assert not result.instances
        assert len(result.issues) == 1

    def test_initial_masks_loaded(self, tmp_path):
        m = square_mask(30, 30, 9)
        init = square_mask(30, 30, 7)
        root = make_folder_pairs(tmp_path / "d", {"a": m}, initial={"a": init})
        result = load_dataset(root)
        assert result.instances[0].initial_mask == init

    def test_bad_layout(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset(tmp_path, layout="bogus")

    def test_missing_dirs(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")


class TestSimulateInstance:
    def make_instance(self, tmp_path, mask=None, initial=None, stem="a"):
        mask = mask or square_mask()
        root = make_folder_pairs(tmp_path / f"d_{stem}", {stem: mask},
                                 initial={stem: initial} if initial else None)
        return load_dataset(root).instances[0]

    def test_scratch_first_click_at_square_center(self, tmp_path):
        inst = self.make_instance(tmp_path)
        trace = simulate_instance(NearestClickPredictor(), inst, seed=3)
        first = trace.rounds[0]
        assert (first.click.x, first.click.y) == (50, 50)
        assert first.click.polarity == "positive"
        assert first.iou > 0.0
        assert all(r.iou > 0.0 for r in trace.rounds)

    def test_trace_respects_budget(self, tmp_path):
        inst = self.make_instance(tmp_path)
        trace = simulate_instance(NearestClickPredictor(), inst, seed=1)
        assert len(trace.rounds) <= 20

    def test_refine_perfect_initial_mask(self, tmp_path):
        m = square_mask()
        inst = self.make_instance(tmp_path, mask=m, initial=m)
        trace = simulate_instance(NearestClickPredictor(), inst, mode="refine", seed=0)
        assert trace.rounds == ()
        assert trace.initial_iou == 1.0
        assert trace.iou_at(5) == 1.0

    def test_refine_without_initial_mask(self, tmp_path):
        inst = self.make_instance(tmp_path)
        with pytest.raises(ValueError):
            simulate_instance(NearestClickPredictor(), inst, mode="refine")

    def test_deterministic_under_seed(self, tmp_path):
        inst = self.make_instance(tmp_path)
        a = simulate_instance(NearestClickPredictor(), inst, seed=11)
        b = simulate_instance(NearestClickPredictor(), inst, seed=11)
        assert a == b

    def test_embedded_masks_round_trip(self, tmp_path):
        inst = self.make_instance(tmp_path)
        trace = simulate_instance(NearestClickPredictor(), inst, seed=2, include_masks=True)
        m = round_mask(trace.rounds[0])
        assert m.width == 101 and m.height == 101
        # round 1: single positive click, builtin fills the frame
        assert m == Bitmask.full(101, 101)

    def test_predictor_failure_marks_partial_trace(self, tmp_path):
        inst = self.make_instance(tmp_path)

        class Flaky:
            descriptor = NearestClickPredictor().descriptor
            calls = 0

            def predict(self, stack):
                Flaky.calls += 1
                if Flaky.calls >= 3:
                    raise RuntimeError("boom")
                return NearestClickPredictor().predict(stack)

        trace = simulate_instance(Flaky(), inst, seed=0)
        assert trace.aborted is not None and "boom" in trace.aborted
        assert len(trace.rounds) == 2

    def test_run_simulations_matches_jobs(self, tmp_path):
        m1 = square_mask(side=31)
        m2 = square_mask(side=21)
        root = make_folder_pairs(tmp_path / "d", {"a": m1, "b": m2})
        instances = load_dataset(root).instances
        pred = NearestClickPredictor()
        seq = run_simulations(instances, pred, master_seed=7, jobs=1)
        par = run_simulations(instances, pred, master_seed=7, jobs=4)
        assert seq == par


class TestMetrics:
    def fixture_traces(self):
        t1 = trace_from_ious("t1", [0.2, 0.5, 1.0])
        t2 = trace_from_ious("t2", [0.6] * 20)
        t3 = SimulationTrace(instance_id="t3", rounds=(), mode="refine", initial_iou=1.0)
        return [t1, t2, t3]

    def test_clicks_to_reach(self):
        t1, t2, t3 = self.fixture_traces()
        assert clicks_to_reach(t1, 0.85) == 3
        assert clicks_to_reach(t1, 0.5) == 2
        assert clicks_to_reach(t1, 0.15) == 1
        assert clicks_to_reach(t2, 0.85) == 20  # clipped
        assert clicks_to_reach(t3, 0.85) == 1

    def test_clicks_to_reach_monotone_in_target(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            ious = np.clip(np.cumsum(rng.random(12)) / 8.0, 0, 1).tolist()
            t = trace_from_ious("m", ious)
            t1, t2 = sorted(rng.uniform(0.05, 1.0, size=2))
            assert clicks_to_reach(t, t1) <= clicks_to_reach(t, t2)

    def test_mean_clicks_per_object(self):
        assert mean_clicks_per_object(self.fixture_traces(), 0.85) == pytest.approx(8.0)
        half = [trace_from_ious("a", [0.5, 0.9]), trace_from_ious("b", [0.4, 0.9]),
                trace_from_ious("c", [0.1] * 20), trace_from_ious("d", [0.1] * 20)]
        # half reach at 2 clicks, half clipped at 20: mean 11.0
        assert mean_clicks_per_object(half, 0.85) == pytest.approx(11.0)

    def test_uniform_clicks(self):
        traces = self.fixture_traces()
        assert uniform_clicks_to_reach(traces, 0.85) == 3
        assert uniform_clicks_to_reach(traces, 0.9) is None

    def test_uniform_single_trace_equals_per_object(self):
        t = trace_from_ious("x", [0.3, 0.7, 0.92, 0.95])
        assert uniform_clicks_to_reach([t], 0.9) == clicks_to_reach(t, 0.9) == 3

    def test_miou_curve_hand_computed(self):
        curve = miou_curve(self.fixture_traces())
        assert len(curve) == 20
        assert curve[0] == pytest.approx(0.6)
        assert curve[1] == pytest.approx(0.7)
        for k in range(2, 20):
            assert curve[k] == pytest.approx((1.0 + 0.6 + 1.0) / 3)

    def test_constant_perfect_curve(self):
        traces = [trace_from_ious("a", [1.0]), trace_from_ious("b", [1.0])]
        assert miou_curve(traces) == [1.0] * 20

    def test_report_and_csv(self):
        report = EvaluationReport.from_traces(self.fixture_traces(), [0.85, 0.9])
        assert report.targets[0.85]["uniform_clicks"] == 3
        assert report.targets[0.9]["uniform_clicks_display"] == ">20"
        csv = curve_to_csv(report.curve)
        assert csv.startswith("k,miou\n1,0.6")
        assert len(csv.strip().splitlines()) == 21

    def test_bad_target(self):
        with pytest.raises(ValueError):
            EvaluationReport.from_traces(self.fixture_traces(), [1.5])


class TestTracePersistence:
    def test_round_trip(self, tmp_path):
        traces = [
            trace_from_ious("a", [0.4, 0.9]),
            SimulationTrace("b", (), mode="refine", initial_iou=0.77),
        ]
        path = tmp_path / "traces.jsonl"
        write_traces(path, traces, run_spec={"seed": 7, "sampler": "iterative-largest"})
        back, spec = read_traces(path)
        assert back == traces
        assert spec["seed"] == 7

    def test_report_regeneration_is_identical(self, tmp_path):
        traces = [trace_from_ious("a", [0.2, 0.6, 0.9]), trace_from_ious("b", [0.95])]
        path = tmp_path / "traces.jsonl"
        write_traces(path, traces)
        back, _ = read_traces(path)
        r1 = EvaluationReport.from_traces(traces, [0.85]).to_json()
        r2 = EvaluationReport.from_traces(back, [0.85]).to_json()
        assert r1 == r2

    def test_masks_embedded_when_flagged(self, tmp_path):
        from clickseg.raster import mask_to_rle

        m = square_mask(9, 9, 3)
        rounds = (RoundRecord(1, Click(0, 0, "positive", 0), 0.5, mask_to_rle(m)),)
        path = tmp_path / "t.jsonl"
        write_traces(path, [SimulationTrace("a", rounds)])
        back, _ = read_traces(path)
        assert round_mask(back[0].rounds[0]) == m

    @pytest.mark.parametrize(
        "lines",
        [
            ["{not json"],
            ['{"type": "round", "instance": "a", "round": 1, "click": {"x": 0, "y": 0, "polarity": "positive"}, "iou": 0.5}'],
            ['{"type": "trace", "instance": "a", "mode": "scratch", "sampler": "s", "seed": 0, "initial_iou": null}'],
            ['{"type": "wat"}'],
        ],
    )
    def test_malformed_files(self, tmp_path, lines):
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceFormatError):
            read_traces(path)

    def test_rounds_must_be_contiguous(self):
        with pytest.raises(ValueError):
            SimulationTrace("a", (RoundRecord(2, Click(0, 0, "positive", 0), 0.5),))
