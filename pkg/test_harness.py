import copy
import sys
from fractions import Fraction
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from dejavu.adversary import DelayKind  # noqa: E402
from dejavu.harness import Event, EventKind, SweepSpec, SweepTargets, _Engine, _xy, run, sweep  # noqa: E402
from dejavu.metrics import offset_uniformity  # noqa: E402
from dejavu.perception import ObjectClass  # noqa: E402
from dejavu.report import REPORT_HEADER, report_text, run_row, sweep_rows, trace_text  # noqa: E402
from dejavu.scenario import ScenarioError, from_dict, load_scenario, read_doc  # noqa: E402
from dejavu.timebase import ms, sec  # noqa: E402

SCEN = Path(__file__).resolve().parent / "scenarios"


def _raises(exc, fn, *a, **kw) -> bool:
    try:
        fn(*a, **kw)
    except exc:
        return True
    return False


def _load(name):
    return load_scenario(SCEN / f"{name}.json")


def _with_attack(name, attack):
    doc = copy.deepcopy(read_doc(SCEN / f"{name}.json"))
    doc["attack"] = attack
    return from_dict(doc)


def _stale(targets, kind="constant", k=0, k_by=None):
    return {"capability": "timestamp_forge", "targets": list(targets),
            "delay": {"kind": kind, "k": k, "k_by_stream": k_by or {}}}


def _at(result, kind, t_sys):
    return next(r for r in result.records_of(kind) if r["t_sys"] == t_sys)


def test_benign_run_is_faithful():
    res = run(_load("crossing_pedestrian"))
    assert len(res.tuples) == 101
    assert all(v == 0 for t in res.tuples for v in t.content_offsets.values())
    rep = res.report
    assert rep.mean_abs_offset == 0
    assert rep.recall == 1 and rep.precision == 1
    assert rep.detection.tp == 183


def test_testbed_offsets():
    res = run(_load("testbed_1hz_shift5s"))
    got = {t.t_sys // sec(1): t.content_offsets[1] for t in res.tuples}
    assert got == {**{n: 0 for n in range(7)}, **{n: -5 for n in range(12, 20)}}


def test_runs_are_reproducible():
    for name in ("crossing_pedestrian", "two_crossing_cars_mul_uniform5", "passing_vehicle_replay"):
        a, b = run(_load(name)), run(_load(name))
        assert trace_text(a.records) == trace_text(b.records)
        assert report_text([run_row(a.scenario, a.report)]) == report_text([run_row(b.scenario, b.report)])


def test_seed_override_changes_uniform_draws():
    a = run(load_scenario(SCEN / "two_crossing_cars_mul_uniform5.json", seed=1))
    b = run(load_scenario(SCEN / "two_crossing_cars_mul_uniform5.json", seed=2))
    assert [t.content_offsets for t in a.tuples] != [t.content_offsets for t in b.tuples]


def test_uni_lidar_recall_falls_with_k():
    recalls = []
    for k in range(6):
        rep = run(_with_attack("crossing_pedestrian", _stale(["lidar"], k=k))).report
        recalls.append(rep.recall)
        # each pedestrian is missed for k frames after it appears
        assert rep.recall == Fraction(183 - 2 * k, 183)
    assert all(a > b for a, b in zip(recalls, recalls[1:]))


def test_uni_camera_delay_leaves_recall():
    for k in (1, 3):
        rep = run(_with_attack("crossing_pedestrian", _stale(["camera"], k=k))).report
        assert rep.recall == 1


def test_uni_uniform_offsets_cover_support():
    res = run(_with_attack("crossing_pedestrian", _stale(["lidar"], kind="uniform", k=3)))
    hist = res.report.pairing[1]
    assert set(hist) <= {0, -1, -2, -3} and len(hist) == 4
    assert offset_uniformity(hist, 3) > 0.001
    assert res.report.pairing[0].keys() == {0}


def test_mul_equal_constant_keeps_identities():
    benign = run(_load("two_crossing_cars")).report
    assert benign.idsw == 0 and benign.mota == 1
    for name in ("two_crossing_cars", "crossing_pedestrian"):
        base = run(_load(name)).report
        for k in range(1, 6):
            rep = run(_with_attack(name, _stale(["camera", "lidar"], k=k))).report
            assert rep.idsw == base.idsw, (name, k)


def test_mul_uniform_switches_identities():
    benign = run(_load("two_crossing_cars")).report
    for k in (3, 5):
        rep = run(_with_attack("two_crossing_cars", _stale(["camera", "lidar"], kind="uniform", k=k))).report
        assert rep.idsw > benign.idsw
        assert rep.mota < benign.mota
    shipped = run(_load("two_crossing_cars_mul_uniform5")).report
    assert shipped.idsw > 0


def test_stale_lidar_misses_spawning_pedestrian():
    res = run(_load("pedestrian_spawn_stale_lidar"))
    det = _at(res, "detection", sec(3))
    assert 2 in det["fn_oids"] and 2 in det["camera_oids"] and 2 not in det["lidar_oids"]
    assert det["fn"] >= 1


def test_stale_lidar_keeps_despawned_pedestrian():
    res = run(_load("pedestrian_despawn_stale_lidar"))
    det = _at(res, "detection", sec(5) + ms(100))
    assert det["phantoms"] >= 1
    assert 2 in det["lidar_oids"] and 2 not in det["gt_oids"]


def test_replay_plants_departed_vehicle():
    res = run(_load("passing_vehicle_replay"))
    det = _at(res, "detection", sec(4) + ms(100))
    assert det["phantoms"] >= 1 and 1 in det["lidar_oids"]
    assert all(t.content_offsets[1] == -1 for t in res.tuples if t.t_sys >= ms(200))
    assert all(t.member(1).forged for t in res.tuples if t.t_sys >= ms(200))


def test_replay_wins_the_race():
    res = run(_load("replay_timing_10hz"))
    lidar = [r for r in res.records_of("packet") if r["stream"] == "lidar"]
    genuine = {r["seq"]: r["arrival"] for r in lidar if not r["forged"]}
    forged = {r["seq"]: r["arrival"] for r in lidar if r["forged"]}
    common = sorted(set(genuine) & set(forged))
    assert len(common) >= 990
    wins = sum(forged[s] < genuine[s] for s in common)
    assert wins / len(common) >= 0.99


def test_stale_lidar_equals_delayed_benign():
    benign = run(_load("crossing_pedestrian"))
    stale = run(_with_attack("crossing_pedestrian", _stale(["lidar"], k=1)))
    before = {r["t_sys"]: sorted(d[:2] for d in r["detections"]) for r in benign.records_of("detection")}
    for r in stale.records_of("detection"):
        if r["t_sys"] >= ms(100):
            assert sorted(d[:2] for d in r["detections"]) == before[r["t_sys"] - ms(100)]


def test_clock_desync_pairs_previous_frame():
    res = run(_load("clock_desync_lidar"))
    assert res.tuples
    assert {t.content_offsets[1] for t in res.tuples} == {-1}
    assert {t.content_offsets[0] for t in res.tuples} == {0}


def test_trace_records_carry_kinds():
    res = run(_load("passing_vehicle_replay"))
    kinds = {r["kind"] for r in res.records}
    assert {"note", "packet", "tuple", "detection", "track"} <= kinds
    assert res.records[0]["text"] == "run start" and res.records[-1]["text"] == "run summary"
    assert all('"schema":1' in line for line in trace_text(res.records).splitlines())


def test_duplicate_event_key_rejected():
    eng = _Engine(_load("crossing_pedestrian"))
    eng._schedule(Event(sec(1), 0, 10, EventKind.CAPTURE))
    assert _raises(RuntimeError, eng._schedule, Event(sec(1), 0, 10, EventKind.CAPTURE))
    eng._schedule(Event(sec(1), 0, 10, EventKind.DELIVER))


def test_sweep_grid_shape():
    base = _load("crossing_pedestrian")
    spec = SweepSpec(SweepTargets.BOTH, 5, DelayKind.CONSTANT)
    cells = sweep(base, spec)
    rows = sweep_rows(base, spec, cells)
    assert len(rows) == 36
    assert report_text(rows).splitlines()[0] == ",".join(REPORT_HEADER)
    recall = {(c.k_cam, c.k_lidar): c.report.recall for c in cells}
    for kl in range(6):
        assert len({recall[(kc, kl)] for kc in range(6)}) == 1
    assert all(recall[(0, k)] > recall[(0, k + 1)] for k in range(5))
    assert {r["mode"] for r in rows} == {"mul"} and {r["delay_kind"] for r in rows} == {"constant"}


def test_sweep_single_target_and_jobs():
    base = _load("crossing_pedestrian")
    spec = SweepSpec(SweepTargets.LIDAR, 2, DelayKind.UNIFORM)
    one = sweep_rows(base, spec, sweep(base, spec, jobs=1))
    two = sweep_rows(base, spec, sweep(base, spec, jobs=2))
    assert one == two
    assert [(r["k_cam"], r["k_lidar"], r["mode"]) for r in one] == [("0", "0", "uni"), ("0", "1", "uni"),
                                                                    ("0", "2", "uni")]


def test_sweep_needs_benign_base():
    assert _raises(ScenarioError, sweep, _load("pedestrian_spawn_stale_lidar"), SweepSpec())


def test_run_row_for_benign_and_attacked():
    benign = run(_load("crossing_pedestrian"))
    row = run_row(benign.scenario, benign.report)
    assert (row["mode"], row["delay_kind"], row["k_cam"], row["k_lidar"]) == ("benign", "none", "0", "0")
    assert row["recall"] == "1.000000"
    res = run(_load("pedestrian_spawn_stale_lidar"))
    row = run_row(res.scenario, res.report)
    assert (row["mode"], row["delay_kind"], row["k_lidar"]) == ("uni", "constant", "1")


def test_per_class_covers_declared_classes_only():
    res = run(_load("crossing_pedestrian"))
    per_class = res.report.per_class
    assert set(per_class) == {ObjectClass.CAR, ObjectClass.PEDESTRIAN}
    assert ObjectClass.CYCLIST not in per_class
    # every ground-truth object has a class, so the per-class misses and hits add up
    assert sum(t.tp + t.fn for t in per_class.values()) == res.report.detection.tp + res.report.detection.fn


def test_per_class_counts_unlabelled_pedestrian_as_miss():
    res = run(_load("pedestrian_spawn_stale_lidar"))
    ped = res.report.per_class[ObjectClass.PEDESTRIAN]
    assert ped.fn >= 1
    assert ped.recall < 1
    summary = res.records[-1]["fields"]["per_class"]
    assert set(summary) == {"car", "pedestrian"}
    assert summary["pedestrian"] == [ped.tp, ped.fp, ped.fn]


def test_outputs_carry_tracker_states():
    res = run(_load("two_crossing_cars"))
    assert len(res.outputs) == len(res.tuples)
    assert [o.t_sys for o in res.outputs] == [t.t_sys for t in res.tuples]
    tracked = {r["t_sys"]: r["tracks"] for r in res.records_of("track")}
    assert any(o.tracks for o in res.outputs)
    for o in res.outputs:
        if o.t_sys in tracked:
            assert [[t.tid] + _xy(t.position) for t in o.tracks] == tracked[o.t_sys]


if __name__ == "__main__":
    fails = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
                print("ok  ", name)
            except Exception as e:
                fails += 1
                print("FAIL", name, repr(e))
    sys.exit(1 if fails else 0)
