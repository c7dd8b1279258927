import sys
from pathlib import Path

from scipy.stats import chisquare

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from dejavu.adversary import (  # noqa: E402
    AttackSpec, Capability, DelayKind, DelayModel, FrameBuffer, ReplayImpersonator, StreamAttack,
    UnknownTarget, apply_attack, delay_histogram, delay_schedule, replay_impersonate, sample_delay,
    shift_stamp, stale_content_fresh_stamp,
)
from dejavu.pipeline import Modality, StreamId, stamp_and_publish  # noqa: E402
from dejavu.timebase import ClockModel, make_rng, ms, sec, truncated_normal_ns  # noqa: E402

CAM = StreamId(0, Modality.CAMERA, "camera")
LID = StreamId(1, Modality.LIDAR, "lidar")
PERIOD = ms(100)


def _raises(exc, fn, *a, **kw) -> bool:
    try:
        fn(*a, **kw)
    except exc:
        return True
    return False


def _spec(kind=DelayKind.CONSTANT, k=0, targets=(1,), **kw):
    return AttackSpec(targets=frozenset(targets), delay=DelayModel(kind, k), **kw)


def _benign(stream, n):
    return stamp_and_publish(stream, n, n * PERIOD, ClockModel())


def test_constant_delays():
    assert all(sample_delay(_spec(k=0), s) == 0 for s in range(50))
    assert all(sample_delay(_spec(k=5), s) == 5 for s in range(50))
    assert _raises(ValueError, sample_delay, _spec(k=1), -1)


def test_uniform_frequencies():
    spec = _spec(DelayKind.UNIFORM, 3, seed=1234)
    counts, _ = delay_histogram(spec, 1, 10_000)
    for c in counts:
        assert abs(c / 10_000 - 0.25) <= 0.02


def test_uniform_chi_square():
    for k in (1, 3, 5):
        spec = _spec(DelayKind.UNIFORM, k, seed=k)
        draws = delay_schedule(spec, 1, range(10_000)).values()
        assert set(draws) <= set(range(k + 1))
        counts = [0] * (k + 1)
        for d in draws:
            counts[d] += 1
        assert chisquare(counts).pvalue > 0.01
        assert delay_histogram(spec, 1, 10_000) == (counts, float(chisquare(counts).pvalue))


def test_uniform_is_deterministic_and_independent_per_stream():
    spec = _spec(DelayKind.UNIFORM, 5, targets=(0, 1), seed=9)
    assert delay_schedule(spec, 0, range(100)) == delay_schedule(spec, 0, range(100))
    assert delay_schedule(spec, 0, range(100)) != delay_schedule(spec, 1, range(100))
    assert _raises(ValueError, sample_delay, spec, 3)


def test_stale_content_zero_delay_is_benign():
    buf = FrameBuffer(depth=1)
    p = _benign(LID, 4)
    buf.remember(p)
    out = stale_content_fresh_stamp(_spec(k=0), buf, p)
    assert out.forged and out.benign_view() == p.benign_view()


def test_stale_content_one_frame():
    spec = _spec(k=1)
    buf = FrameBuffer(depth=2)
    notes = []
    for n in range(30):
        p = _benign(LID, n)
        buf.remember(p)
        out = stale_content_fresh_stamp(spec, buf, p, lambda t, f: notes.append(t))
        assert out.t_pre == p.t_pre and out.seq == n
        if n >= 1:
            assert out.t_pre - out.t_act == ms(100)
            assert out.payload == n - 1
    assert notes == ["delay clamped to history"]


def test_stale_content_empty_buffer_emits_nothing():
    assert stale_content_fresh_stamp(_spec(k=2), FrameBuffer(depth=3), _benign(LID, 0)) is None


def test_shift_stamp():
    p = _benign(LID, 3)
    same = shift_stamp(_spec(), p)
    assert same.forged and same.benign_view() == p.benign_view()
    moved = shift_stamp(_spec(stamp_offset=sec(5)), p)
    assert moved.t_pre == p.t_pre + sec(5)
    assert (moved.t_act, moved.payload) == (p.t_act, p.payload)


def test_tamper_identity_and_window():
    sa = StreamAttack(LID, _spec(k=0), PERIOD, FrameBuffer(depth=1))
    for n in range(10):
        p = _benign(LID, n)
        assert sa.tamper(p).benign_view() == p.benign_view()
    sa = StreamAttack(LID, _spec(k=2, start_time=ms(500), stop_time=ms(800)), PERIOD, FrameBuffer(depth=3))
    payloads = [sa.tamper(_benign(LID, n)).payload for n in range(10)]
    assert payloads == [0, 1, 2, 3, 4, 3, 4, 5, 8, 9]


def test_replay_exactly_periodic():
    spec = _spec(capability=Capability.REPLAY_IMPERSONATE, lead=ms(5), history_depth=1)
    imp = ReplayImpersonator(spec, LID)
    assert imp.plan(0) is None
    for n in range(20):
        p = _benign(LID, n)
        arrival = n * PERIOD + ms(2)
        if n >= 2:
            send_at, forged = planned
            assert arrival - send_at == ms(5)
            assert (forged.seq, forged.t_pre, forged.payload) == (n, p.t_pre, n - 1)
            assert forged.forged
        imp.observe(p, arrival)
        planned = imp.plan(arrival)
        assert (planned is None) == (n == 0)


def test_replay_precedes_genuine_under_jitter():
    spec = _spec(capability=Capability.REPLAY_IMPERSONATE, lead=ms(5), history_depth=1)
    imp = ReplayImpersonator(spec, LID)
    rng = make_rng("replay-jitter", 1)
    wins = trials = 0
    planned = None
    for n in range(1002):
        arrival = n * PERIOD + ms(2) + truncated_normal_ns(rng, ms(1))
        if planned is not None:
            trials += 1
            wins += planned[0] < arrival
        imp.observe(_benign(LID, n), arrival)
        planned = imp.plan(arrival)
    assert trials == 1000
    assert wins / trials >= 0.99


def test_replay_functional_form():
    spec = _spec(capability=Capability.REPLAY_IMPERSONATE, lead=ms(5), history_depth=2)
    obs = [(_benign(LID, n), n * PERIOD) for n in range(3)]
    send_at, forged = replay_impersonate(spec, obs)
    assert send_at == 3 * PERIOD - ms(5)
    assert (forged.seq, forged.payload) == (3, 1)
    assert replay_impersonate(spec, obs[:1]) is None


def test_apply_attack_rejects_unknown_target():
    spec = _spec(k=1, targets=(7,))
    assert _raises(UnknownTarget, apply_attack, spec, [CAM, LID], {0: PERIOD, 1: PERIOD},
                   {0: ClockModel(), 1: ClockModel()})


def test_apply_attack_clock_desync_routes_to_clock():
    spec = _spec(k=2, capability=Capability.CLOCK_DESYNC, stamp_offset=ms(3))
    plan = apply_attack(spec, [CAM, LID], {0: PERIOD, 1: PERIOD}, {0: ClockModel(), 1: ClockModel()})
    assert plan.per_stream == {}
    assert plan.clock_for(1, sec(1)).offset == ms(203)
    assert plan.clock_for(0, sec(1)).offset == 0
    bad = _spec(DelayKind.UNIFORM, 2, capability=Capability.CLOCK_DESYNC)
    assert _raises(ValueError, apply_attack, bad, [CAM, LID], {0: PERIOD, 1: PERIOD},
                   {0: ClockModel(), 1: ClockModel()})


def test_apply_attack_uni_and_mul():
    uni = apply_attack(_spec(k=1), [CAM, LID], {0: PERIOD, 1: PERIOD}, {0: ClockModel(), 1: ClockModel()})
    assert uni.spec.is_uni and set(uni.per_stream) == {1}
    mul = apply_attack(_spec(k=1, targets=(0, 1), capability=Capability.REPLAY_IMPERSONATE),
                       [CAM, LID], {0: PERIOD, 1: PERIOD}, {0: ClockModel(), 1: ClockModel()})
    assert not mul.spec.is_uni
    assert all(sa.replay is not None for sa in mul.per_stream.values())
    benign = apply_attack(None, [CAM, LID], {0: PERIOD, 1: PERIOD}, {0: ClockModel(), 1: ClockModel()})
    assert benign.for_stream(1) is None


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
