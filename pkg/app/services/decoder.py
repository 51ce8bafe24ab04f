"""
Two-phase iterative SIC decoder.

MuSCA decoding alternates two passes until neither makes progress:

- locate: decode signalling fields in the slots where they face at most
  ``signalling_max_interferers`` others; a decoded field reveals the user's
  other bursts, and its signalling contribution is subtracted everywhere.
- data: among located users, attempt the one with the lowest PER over its
  current data-layer configuration; a success subtracts all its data bursts.

Replica modes (sa, crdsa, irsa) skip the locate pass: any clean replica
decodes the user and both its layers are subtracted.

A failed attempt is not repeated until the relevant configuration strictly
improves (``retry_rule="on-improvement"``) or ever (``"never"``).
"""
import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from app.models.frame import FrameState, InterferenceConfig, Layer, UserTransmission
from app.models.schemas import DecodeMode, DecodePolicy
from app.services.frame_builder import config_of
from app.services.per_model import PerTable

logger = logging.getLogger(__name__)

LOCATE = "locate"
DATA = "data"


@dataclass(frozen=True, slots=True)
class DecodeEvent:
    """One decoding attempt. ``config`` is the canonical configuration before erasure."""
    phase: str
    user_id: int
    config: InterferenceConfig
    per_used: float
    success: bool
    cleared: Tuple[Layer, ...] = ()
    draw: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "user_id": self.user_id,
            "config": str(self.config),
            "per_used": self.per_used,
            "success": self.success,
            "draw": self.draw,
        }


@dataclass(slots=True)
class DecodeReport:
    decoded: Set[int] = field(default_factory=set)
    located: Set[int] = field(default_factory=set)
    events: List[DecodeEvent] = field(default_factory=list)
    deadlock: bool = False
    iterations: int = 0

    def data_successes(self) -> List[DecodeEvent]:
        return [e for e in self.events if e.phase == DATA and e.success]

    def to_dict(self) -> dict:
        return {
            "decoded": sorted(self.decoded),
            "located": sorted(self.located),
            "events": [e.to_dict() for e in self.events],
            "deadlock": self.deadlock,
            "iterations": self.iterations,
        }


class SICDecoder:
    """
    Decoder for one frame.

    Failure memory lives on the instance, so a fresh decoder is used per
    frame; ``decode`` resets it.
    """

    def __init__(
        self,
        per_table: PerTable,
        snr_db: float,
        policy: Optional[DecodePolicy] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.per_table = per_table
        self.snr_db = snr_db
        self.policy = policy or DecodePolicy()
        if rng is None and not self.policy.forced_success:
            raise ValueError("A random generator is required unless forced_success is set")
        self.rng = rng
        self.events: List[DecodeEvent] = []
        self._seq = itertools.count()
        self._sig_failures: Dict[Tuple[int, int], int] = {}
        self._data_failures: Dict[int, InterferenceConfig] = {}

    def reset(self) -> None:
        self.events = []
        self._sig_failures.clear()
        self._data_failures.clear()

    def decode(self, frame: FrameState, users: Sequence[UserTransmission]) -> DecodeReport:
        """Alternate locate and data passes until an alternation produces no event."""
        self.reset()
        iterations = 0
        while True:
            before = len(self.events)
            self.locate_pass(frame, users)
            self.data_pass(frame, users)
            if len(self.events) == before:
                break
            iterations += 1
        report = DecodeReport(
            decoded={u.user_id for u in users if u.decoded},
            located={u.user_id for u in users if u.located},
            events=list(self.events),
            iterations=iterations,
        )
        report.deadlock = len(report.decoded) < len(users)
        if report.deadlock:
            logger.debug(
                "Deadlock with %d of %d users undecoded",
                len(users) - len(report.decoded),
                len(users),
            )
        return report

    # -- drawing -----------------------------------------------------------

    def _draw(self, per: float) -> Tuple[bool, Optional[float]]:
        if self.policy.forced_success:
            return True, None
        u = float(self.rng.random())
        return u >= per, u

    def _record(self, phase, user, config, per, success, draw, cleared=()) -> None:
        self.events.append(
            DecodeEvent(
                phase=phase,
                user_id=user.user_id,
                config=config,
                per_used=per,
                success=success,
                cleared=tuple(cleared) if success else (),
                draw=draw,
            )
        )

    # -- locate ------------------------------------------------------------

    def locate_pass(self, frame: FrameState, users: Sequence[UserTransmission]) -> List[int]:
        """Decode signalling fields to fixpoint; returns newly located user ids."""
        if self.policy.mode is not DecodeMode.MUSCA:
            return []
        by_id = {u.user_id: u for u in users}
        sig = frame.sig_interferers
        newly: List[int] = []

        # Degree-1 users carry no pointers: their only burst is already known.
        for user in users:
            if user.located or user.degree != 1:
                continue
            config = config_of(user, frame, Layer.SIGNALLING)
            user.located = True
            subtract_user(frame, user, Layer.SIGNALLING)
            self._record(LOCATE, user, config, 0.0, True, None, (Layer.SIGNALLING,))
            newly.append(user.user_id)

        limit = self.policy.signalling_max_interferers + 1
        heap: List[Tuple[int, int, int]] = []

        def push_slot(slot: int) -> None:
            n = len(sig[slot])
            if 1 <= n <= limit:
                for uid in sig[slot]:
                    heapq.heappush(heap, (n - 1, uid, slot))

        for slot in range(frame.n_slots):
            push_slot(slot)

        while heap:
            count, uid, slot = heapq.heappop(heap)
            if uid not in sig[slot] or len(sig[slot]) - 1 != count:
                continue
            if not self._locate_permitted(uid, slot, count):
                continue
            user = by_id[uid]
            config = InterferenceConfig((count,))
            per = self.per_table.lookup(user.profile.signalling_code_id, self.snr_db, config)
            if per >= 1.0:
                self._sig_failures[(uid, slot)] = count
                continue
            success, draw = self._draw(per)
            self._record(LOCATE, user, config, per, success, draw, (Layer.SIGNALLING,))
            if not success:
                self._sig_failures[(uid, slot)] = count
                continue
            user.located = True
            subtract_user(frame, user, Layer.SIGNALLING)
            newly.append(uid)
            for touched in user.slots:
                push_slot(touched)
        return newly

    def _locate_permitted(self, uid: int, slot: int, count: int) -> bool:
        failed = self._sig_failures.get((uid, slot))
        if failed is None:
            return True
        return self.policy.retry_rule == "on-improvement" and count < failed

    # -- data --------------------------------------------------------------

    def data_pass(self, frame: FrameState, users: Sequence[UserTransmission]) -> List[int]:
        """Decode data fields lowest-PER first to fixpoint; returns newly decoded user ids."""
        if self.policy.mode is DecodeMode.MUSCA:
            return self._musca_data_pass(frame, users)
        return self._replica_data_pass(frame, users)

    def _data_permitted(self, uid: int, erased: InterferenceConfig) -> bool:
        failed = self._data_failures.get(uid)
        if failed is None:
            return True
        return self.policy.retry_rule == "on-improvement" and erased.strictly_improves_on(failed)

    def _musca_data_pass(self, frame: FrameState, users: Sequence[UserTransmission]) -> List[int]:
        by_id = {u.user_id: u for u in users}
        data = frame.data_interferers
        threshold = self.per_table.erasure_threshold
        heap: List[Tuple[float, int, int]] = []
        current: Dict[int, Tuple[int, InterferenceConfig]] = {}
        newly: List[int] = []

        def rescore(user: UserTransmission) -> None:
            raw = config_of(user, frame, Layer.DATA)
            per = self.per_table.lookup(user.profile.code_id, self.snr_db, raw)
            seq = next(self._seq)
            current[user.user_id] = (seq, raw)
            if per < 1.0 and self._data_permitted(user.user_id, raw.erase(threshold)):
                heapq.heappush(heap, (per, user.user_id, seq))

        for user in users:
            if user.located and not user.decoded:
                rescore(user)

        while heap:
            per, uid, seq = heapq.heappop(heap)
            user = by_id[uid]
            if user.decoded or current[uid][0] != seq:
                continue
            raw = current[uid][1]
            success, draw = self._draw(per)
            self._record(DATA, user, raw, per, success, draw, (Layer.DATA,))
            if not success:
                self._data_failures[uid] = raw.erase(threshold)
                continue
            affected = {m for s in user.slots for m in data[s] if m != uid}
            user.decoded = True
            subtract_user(frame, user, Layer.DATA)
            newly.append(uid)
            for other in sorted(affected):
                peer = by_id[other]
                if peer.located and not peer.decoded:
                    rescore(peer)
        return newly

    def _replica_data_pass(self, frame: FrameState, users: Sequence[UserTransmission]) -> List[int]:
        by_id = {u.user_id: u for u in users}
        data = frame.data_interferers
        threshold = self.per_table.erasure_threshold
        clean = InterferenceConfig((0,))
        heap: List[Tuple[float, int]] = []
        newly: List[int] = []

        def offer(user: UserTransmission) -> None:
            if user.decoded or not any(len(data[s]) == 1 for s in user.slots):
                return
            raw = config_of(user, frame, Layer.DATA)
            if not self._data_permitted(user.user_id, raw.erase(threshold)):
                return
            per = self.per_table.lookup(user.profile.code_id, self.snr_db, clean)
            if per < 1.0:
                heapq.heappush(heap, (per, user.user_id))

        for slot in range(frame.n_slots):
            if len(data[slot]) == 1:
                offer(by_id[next(iter(data[slot]))])

        while heap:
            per, uid = heapq.heappop(heap)
            user = by_id[uid]
            if user.decoded:
                continue
            raw = config_of(user, frame, Layer.DATA)
            if not self._data_permitted(uid, raw.erase(threshold)):
                continue
            success, draw = self._draw(per)
            self._record(DATA, user, raw, per, success, draw, (Layer.SIGNALLING, Layer.DATA))
            if not success:
                self._data_failures[uid] = raw.erase(threshold)
                continue
            affected = {m for s in user.slots for m in data[s] if m != uid}
            user.located = True
            user.decoded = True
            subtract_user(frame, user, Layer.SIGNALLING)
            subtract_user(frame, user, Layer.DATA)
            newly.append(uid)
            for other in sorted(affected):
                offer(by_id[other])
        return newly


def subtract_user(frame: FrameState, user: UserTransmission, layer: Layer) -> FrameState:
    """Remove ``user`` from ``layer`` at each of its slots; absence anywhere is an invariant violation."""
    sets = frame.layer(layer)
    for slot in user.slots:
        if not 0 <= slot < frame.n_slots or user.user_id not in sets[slot]:
            raise DecoderInvariantError(
                f"User {user.user_id} is not on the {layer.value} layer of slot {slot}"
            )
    for slot in user.slots:
        sets[slot].discard(user.user_id)
    return frame


def decode_frame(
    frame: FrameState,
    users: Sequence[UserTransmission],
    per: PerTable,
    snr_db: float,
    policy: Optional[DecodePolicy] = None,
    rng: Optional[np.random.Generator] = None,
) -> DecodeReport:
    return SICDecoder(per, snr_db, policy, rng).decode(frame, users)


def locate_pass(
    frame: FrameState,
    users: Sequence[UserTransmission],
    per: PerTable,
    snr_db: float,
    policy: Optional[DecodePolicy] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[int]:
    return SICDecoder(per, snr_db, policy, rng).locate_pass(frame, users)


def data_pass(
    frame: FrameState,
    users: Sequence[UserTransmission],
    per: PerTable,
    snr_db: float,
    policy: Optional[DecodePolicy] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[int]:
    return SICDecoder(per, snr_db, policy, rng).data_pass(frame, users)


def replay_events(
    frame: FrameState,
    users: Iterable[UserTransmission],
    events: Iterable[DecodeEvent],
) -> FrameState:
    """Apply the subtractions of successful events to a copy of ``frame``."""
    replayed = frame.copy()
    by_id = {u.user_id: u for u in users}
    for event in events:
        if not event.success:
            continue
        for layer in event.cleared:
            subtract_user(replayed, by_id[event.user_id], layer)
    return replayed


class DecoderInvariantError(Exception):
    """Raised when the decoder would corrupt the frame (e.g. a double subtraction)."""
    pass
