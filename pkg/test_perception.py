import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from dejavu.perception import (  # noqa: E402
    FieldOfView, FusedDetection, FusionMode, ObjectClass, PerceptionParams, Tracker, World, WorldObject,
    fuse, render_snapshot, track_update,
)
from dejavu.pipeline import Modality, SensorPacket, StreamId  # noqa: E402
from dejavu.synchronizer import AlignedTuple  # noqa: E402
from dejavu.timebase import ms, sec  # noqa: E402

CAM = StreamId(0, Modality.CAMERA, "camera")
LID = StreamId(1, Modality.LIDAR, "lidar")


def _raises(exc, fn, *a, **kw) -> bool:
    try:
        fn(*a, **kw)
    except exc:
        return True
    return False


def ped(oid, t0, t1, x0=4.0, y0=-3.0, x1=4.0, y1=3.0):
    return WorldObject(oid, ObjectClass.PEDESTRIAN, ((t0, x0, y0), (t1, x1, y1)), 0.3)


def car(oid, y, t1=sec(10)):
    return WorldObject(oid, ObjectClass.CAR, ((0, -10.0, y), (t1, 10.0, y)), 1.0)


def tuple_at(t_sys, cam_t, lid_t):
    members = (SensorPacket(CAM, 0, cam_t, t_sys, 0), SensorPacket(LID, 0, lid_t, t_sys, 0))
    return AlignedTuple(members, t_sys, t_sys, 0, {})


def fuse_at(world, t_sys, cam_t, lid_t, mode=FusionMode.LIDAR_DOMINANT, params=None):
    params = params or PerceptionParams()
    snaps = {0: render_snapshot(world, CAM, cam_t, params), 1: render_snapshot(world, LID, lid_t, params)}
    return fuse(tuple_at(t_sys, cam_t, lid_t), snaps, mode, params.gate)


def test_empty_world_empty_snapshot():
    assert render_snapshot(World(), LID, sec(1)).observations == ()


def test_liveness_interval():
    w = World((ped(1, sec(10), sec(20)),))
    assert render_snapshot(w, CAM, sec(15)).oids() == [1]
    assert render_snapshot(w, LID, sec(15)).oids() == [1]
    assert render_snapshot(w, CAM, sec(10)).oids() == [1]
    assert render_snapshot(w, LID, sec(10) - ms(100)).oids() == []


def test_modalities_differ_in_class_and_noise():
    w = World((car(1, 10.0),), seed=3)
    lid = render_snapshot(w, LID, sec(5)).observations[0]
    cam = render_snapshot(w, CAM, sec(5)).observations[0]
    assert lid.cls is None and lid.position == (0.0, 10.0)
    assert cam.cls == ObjectClass.CAR
    # lateral noise only: the observation stays on the same range ring, within 4 sigma
    assert math.hypot(cam.position[0] - 0.0, cam.position[1] - 10.0) <= 4 * 0.3 + 1e-9
    assert render_snapshot(w, CAM, sec(5)) == render_snapshot(w, CAM, sec(5))


def test_field_of_view_sector():
    fov = FieldOfView(heading_deg=0.0, half_angle_deg=45.0, range_m=30.0)
    assert fov.contains((10.0, 1.0))
    assert not fov.contains((-10.0, 0.0))
    assert not fov.contains((40.0, 0.0))
    params = PerceptionParams(fov={"camera": fov})
    w = World((car(1, -20.0), car(2, 3.0)))
    assert render_snapshot(w, CAM, sec(9), params).oids() == [2]
    assert render_snapshot(w, LID, sec(9), params).oids() == [1, 2]


def test_benign_fusion_matches_ground_truth():
    w = World((car(1, 10.0), ped(2, 0, sec(10))), seed=1)
    out = fuse_at(w, sec(4), sec(4), sec(4))
    gt = sorted(p for _, p, _ in w.alive_at(sec(4)))
    assert sorted(d.position for d in out.detections) == gt
    assert {d.cls for d in out.detections} == {ObjectClass.CAR, ObjectClass.PEDESTRIAN}
    assert all(d.supporting == frozenset({0, 1}) for d in out.detections)


def test_stale_lidar_misses_new_pedestrian():
    w = World((car(1, 10.0), ped(2, sec(3), sec(6))))
    out = fuse_at(w, sec(3), sec(3), sec(3) - ms(100))
    assert 2 in out.camera_oids and 2 not in out.lidar_oids
    assert len(out.detections) == 1


def test_stale_lidar_keeps_departed_pedestrian():
    w = World((car(1, 10.0), ped(2, sec(1), sec(5))))
    out = fuse_at(w, sec(5) + ms(100), sec(5) + ms(100), sec(5))
    assert 2 in out.lidar_oids and 2 not in out.camera_oids
    assert len(out.detections) == 2
    phantom = [d for d in out.detections if d.supporting == frozenset({1})]
    assert len(phantom) == 1 and phantom[0].cls is None


def test_camera_gated_drops_unconfirmed():
    w = World((car(1, 10.0), ped(2, sec(1), sec(5))))
    out = fuse_at(w, sec(5) + ms(100), sec(5) + ms(100), sec(5), mode=FusionMode.CAMERA_GATED)
    assert len(out.detections) == 1 and out.detections[0].cls == ObjectClass.CAR


def test_fuse_requires_both_modalities():
    t = AlignedTuple((SensorPacket(CAM, 0, 0, 0, 0),), 0, 0, 0, {})
    assert _raises(ValueError, fuse, t, {}, FusionMode.LIDAR_DOMINANT, 2.0)


def test_detection_needs_support():
    assert _raises(ValueError, FusedDetection, (0.0, 0.0), None, frozenset())


def _det(x, y):
    return FusedDetection((x, y), ObjectClass.CAR, frozenset({1}))


def test_single_object_keeps_one_tid():
    tr = Tracker()
    tids = set()
    for n in range(50):
        tids |= {t.tid for t in track_update(tr, [_det(0.5 * n, 2.0)], n * ms(100))}
    assert tids == {1}


def test_gap_longer_than_max_misses_gives_new_tid():
    tr = Tracker(gate_track=3.0, max_misses=2)
    for n in range(5):
        tr.update([_det(0.2 * n, 0.0)], n * ms(100))
    for n in range(5, 8):
        assert tr.update([], n * ms(100)) == []
    assert tr.all_tracks() == []
    out = tr.update([_det(1.6, 0.0)], 8 * ms(100))
    assert [t.tid for t in out] == [2]


def test_short_gap_keeps_tid_with_prediction():
    tr = Tracker(gate_track=3.0, max_misses=2)
    for n in range(5):
        tr.update([_det(1.0 * n, 0.0)], n * ms(100))
    tr.update([], 5 * ms(100))
    tr.update([], 6 * ms(100))
    out = tr.update([_det(7.0, 0.0)], 7 * ms(100))
    assert [t.tid for t in out] == [1]
    assert abs(out[0].velocity[0] - 10.0) < 1e-9


def test_tracker_requires_increasing_time():
    tr = Tracker()
    tr.update([_det(0, 0)], sec(1))
    assert _raises(ValueError, tr.update, [_det(0, 0)], sec(1))


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
