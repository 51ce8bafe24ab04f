"""Tests for the two-phase SIC decoder."""
import itertools

import numpy as np
import pytest

from app.models.frame import Layer
from app.models.schemas import DecodeMode, DecodePolicy, PRESET_DISTRIBUTIONS
from app.services.decoder import (
    DecoderInvariantError,
    SICDecoder,
    data_pass,
    decode_frame,
    locate_pass,
    replay_events,
    subtract_user,
)
from app.services.frame_builder import (
    build_frame,
    default_profiles,
    frame_from_placements,
    replica_profiles,
)
from app.services.per_model import collision_channel_table, ideal_table, parametric_table
from app.services.worked_example import REFERENCE_TRACE, build_example, run_example

ALL_CODES = ["rm_14_64", "turbo_r12", "turbo_r14", "turbo_r16"]
FORCED = DecodePolicy(forced_success=True)


@pytest.fixture(scope="module")
def ideal():
    return ideal_table(ALL_CODES, max_degree=3)


@pytest.fixture(scope="module")
def collision():
    return collision_channel_table(ALL_CODES, max_degree=3)


@pytest.fixture(scope="module")
def parametric_8db():
    return parametric_table([8.0])


def _threshold_peel(n_slots, placements, limit):
    """Users reachable by repeatedly locating every user of a slot holding at most ``limit`` fields."""
    located = {uid for uid, slots in placements.items() if len(slots) == 1}
    occupants = [set() for _ in range(n_slots)]
    for uid, slots in placements.items():
        if uid not in located:
            for s in slots:
                occupants[s].add(uid)
    progress = True
    while progress:
        progress = False
        for s in range(n_slots):
            if 1 <= len(occupants[s]) <= limit:
                for uid in list(occupants[s]):
                    located.add(uid)
                    for t in placements[uid]:
                        occupants[t].discard(uid)
                progress = True
    return located


def _singleton_peel(n_slots, placements):
    """Classic peeling: a slot with one remaining user resolves that user and all its copies."""
    decoded = set()
    occupants = [set() for _ in range(n_slots)]
    for uid, slots in placements.items():
        for s in slots:
            occupants[s].add(uid)
    progress = True
    while progress:
        progress = False
        for s in range(n_slots):
            if len(occupants[s]) == 1:
                uid = next(iter(occupants[s]))
                decoded.add(uid)
                for t in placements[uid]:
                    occupants[t].discard(uid)
                progress = True
    return decoded


def _all_placements(n_slots, max_users, max_degree=3):
    subsets = [
        combo
        for d in range(1, min(max_degree, n_slots) + 1)
        for combo in itertools.combinations(range(n_slots), d)
    ]
    for n_users in range(0, max_users + 1):
        for chosen in itertools.product(subsets, repeat=n_users):
            yield {uid: slots for uid, slots in enumerate(chosen, start=1)}


def test_forced_success_reproduces_example_trace():
    run, report = run_example(forced=True)
    trace = tuple((e.phase, e.user_id, str(e.config)) for e in report.events)
    assert trace == REFERENCE_TRACE
    assert report.decoded == {1, 2, 3, 4}
    assert not report.deadlock
    assert run.matches_reference


def test_example_per_values_come_from_anchor_table():
    _, report = run_example(forced=True)
    data = [e for e in report.events if e.phase == "data"]
    # [1 2 3] reads as [1 2 E]; [0 0] falls back to its nearest dominating entries
    assert [e.per_used for e in data] == [0.02, 1e-4, 1e-4, 1e-4]
    locate = [e for e in report.events if e.phase == "locate"]
    assert [e.per_used for e in locate] == [0.109, 1e-4, 0.109, 1e-4]
    assert all(e.draw is None for e in report.events)


def test_stochastic_example_is_seeded():
    first, _ = run_example(forced=False, seed=5)
    second, _ = run_example(forced=False, seed=5)
    assert first.model_dump() == second.model_dump()
    assert all(e.draw is not None for e in first.events)


def test_empty_frame_decodes_trivially(ideal):
    frame, users = frame_from_placements(3, {}, default_profiles([1]))
    report = decode_frame(frame, users, ideal, 8.0, rng=np.random.default_rng(0))
    assert report.decoded == set()
    assert report.events == []
    assert not report.deadlock
    assert report.iterations == 0


def test_two_clashing_single_burst_users_deadlock(collision):
    frame, users = frame_from_placements(1, {1: (0,), 2: (0,)}, default_profiles([1]))
    report = decode_frame(frame, users, collision, 8.0, rng=np.random.default_rng(0))
    assert report.located == {1, 2}
    assert report.decoded == set()
    assert report.deadlock
    # [1] has PER 1: no data attempt is made
    assert report.data_successes() == []
    assert all(e.phase == "locate" for e in report.events)


def test_double_subtraction_is_rejected():
    frame, users = build_example()
    user = users[0]
    subtract_user(frame, user, Layer.DATA)
    before = frame.occupancy(Layer.DATA)
    with pytest.raises(DecoderInvariantError):
        subtract_user(frame, user, Layer.DATA)
    assert frame.occupancy(Layer.DATA) == before


def test_decoder_requires_rng_unless_forced(ideal):
    with pytest.raises(ValueError):
        SICDecoder(ideal, 8.0)
    SICDecoder(ideal, 8.0, FORCED)


def test_replay_of_events_reproduces_final_frame(parametric_8db):
    """Applying the successful events to the initial frame gives the decoder's final frame."""
    dist = PRESET_DISTRIBUTIONS["irregular-123"]
    profiles = default_profiles([1, 2, 3])
    for seed in range(20):
        rng = np.random.default_rng(seed)
        frame, users = build_frame(40, 30, dist, profiles, rng)
        initial = frame.copy()
        mass = initial.interferer_mass()
        report = SICDecoder(parametric_8db, 8.0, rng=rng).decode(frame, users)

        replayed = replay_events(initial, users, report.events)
        assert replayed.sig_interferers == frame.sig_interferers
        assert replayed.data_interferers == frame.data_interferers
        removed = sum(
            u.degree * sum(1 for e in report.events if e.success and e.user_id == u.user_id)
            for u in users
        )
        assert frame.interferer_mass() == mass - removed


def test_every_decoded_user_was_located_first(parametric_8db):
    dist = PRESET_DISTRIBUTIONS["irregular-123"]
    rng = np.random.default_rng(1)
    frame, users = build_frame(60, 40, dist, default_profiles([1, 2, 3]), rng)
    report = decode_frame(frame, users, parametric_8db, 8.0, rng=rng)
    located_at = {}
    for index, event in enumerate(report.events):
        if event.phase == "locate" and event.success:
            located_at.setdefault(event.user_id, index)
        if event.phase == "data" and event.success:
            assert located_at[event.user_id] < index
    assert report.decoded <= report.located


def test_failed_attempts_are_not_repeated_without_improvement(parametric_8db):
    """Each user has at most one data attempt per distinct erased configuration."""
    dist = PRESET_DISTRIBUTIONS["regular-3"]
    rng = np.random.default_rng(4)
    frame, users = build_frame(45, 30, dist, default_profiles([3]), rng)
    report = decode_frame(frame, users, parametric_8db, 8.0, rng=rng)
    seen = set()
    for event in report.events:
        if event.phase != "data":
            continue
        key = (event.user_id, event.config.erase(2))
        assert key not in seen
        seen.add(key)


def test_never_retry_rule_allows_one_data_attempt_per_user(parametric_8db):
    dist = PRESET_DISTRIBUTIONS["regular-3"]
    rng = np.random.default_rng(4)
    frame, users = build_frame(45, 30, dist, default_profiles([3]), rng)
    policy = DecodePolicy(retry_rule="never")
    report = decode_frame(frame, users, parametric_8db, 8.0, policy, rng)
    attempts = [e.user_id for e in report.events if e.phase == "data"]
    assert len(attempts) == len(set(attempts))


def test_lowest_per_first_with_id_tiebreak():
    """All located users at equal PER are decoded in id order."""
    frame, users = frame_from_placements(4, {1: (0, 1), 2: (2, 3)}, default_profiles([2]))
    table = ideal_table(ALL_CODES, max_degree=3)
    report = decode_frame(frame, users, table, 8.0, FORCED)
    assert [e.user_id for e in report.data_successes()] == [1, 2]


def test_single_passes_can_be_run_alone(ideal):
    frame, users = build_example()
    located = locate_pass(frame, users, ideal, 5.0, FORCED)
    assert located == [1, 4, 2, 3]
    decoded = data_pass(frame, users, ideal, 5.0, FORCED)
    assert sorted(decoded) == [1, 2, 3, 4]


def test_musca_with_zero_per_matches_threshold_peeling(ideal):
    """Exhaustive check over every frame with up to 4 slots and 4 users."""
    profiles = default_profiles([1, 2, 3])
    disagreements = 0
    for n_slots, max_users in ((1, 4), (2, 4), (3, 4), (4, 4)):
        for placements in _all_placements(n_slots, max_users):
            frame, users = frame_from_placements(n_slots, placements, profiles)
            report = decode_frame(frame, users, ideal, 8.0, FORCED)
            if report.decoded != _threshold_peel(n_slots, placements, limit=2):
                disagreements += 1
    assert disagreements == 0


def test_irsa_on_collision_channel_matches_peeling(collision):
    """Exhaustive check of replica decoding against singleton peeling."""
    profiles = replica_profiles([1, 2, 3])
    policy = DecodePolicy(mode=DecodeMode.IRSA, forced_success=True)
    disagreements = 0
    for n_slots, max_users in ((1, 4), (2, 4), (3, 4), (4, 4)):
        for placements in _all_placements(n_slots, max_users):
            frame, users = frame_from_placements(n_slots, placements, profiles)
            report = decode_frame(frame, users, collision, 8.0, policy)
            if report.decoded != _singleton_peel(n_slots, placements):
                disagreements += 1
    assert disagreements == 0


def test_unbounded_signalling_locates_everyone(ideal):
    """With every slot admissible a PER-0 table decodes the whole frame."""
    dist = PRESET_DISTRIBUTIONS["regular-3"]
    rng = np.random.default_rng(2)
    frame, users = build_frame(80, 20, dist, default_profiles([3]), rng)
    policy = DecodePolicy(signalling_max_interferers=1000)
    report = decode_frame(frame, users, ideal, 8.0, policy, rng)
    assert report.decoded == {u.user_id for u in users}


def test_slotted_aloha_decodes_sole_occupants(collision):
    rng = np.random.default_rng(9)
    dist = PRESET_DISTRIBUTIONS["slotted-aloha"]
    frame, users = build_frame(25, 20, dist, replica_profiles([1]), rng)
    occupancy = frame.occupancy(Layer.DATA)
    alone = {u.user_id for u in users if occupancy[u.slots[0]] == 1}
    policy = DecodePolicy(mode=DecodeMode.SA)
    report = decode_frame(frame, users, collision, 8.0, policy, rng)
    assert report.decoded == alone
