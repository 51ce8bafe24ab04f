"""
Frame construction: degree sampling, burst placement and code profiles.

A frame is N_s slots; every user draws a degree d from the degree distribution
and places d bursts on a uniformly random d-subset of the slots. Each burst
carries a signalling field (pointers to the user's other bursts) and a data
field, so the frame tracks two interference ledgers.
"""
import logging
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from app.models.frame import FrameState, InterferenceConfig, Layer, UserTransmission
from app.models.schemas import (
    DEFAULT_INFO_BITS,
    DEFAULT_MODULATION_ORDER,
    CodeProfile,
    DegreeDistribution,
)

logger = logging.getLogger(__name__)


def sample_degree(dist: DegreeDistribution, rng: np.random.Generator) -> int:
    """Draw one degree d with probability P(d)."""
    return int(rng.choice(dist.degrees, p=dist.probabilities))


def sample_degrees(dist: DegreeDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized ``sample_degree``: ``size`` i.i.d. draws."""
    if len(dist.degrees) == 1:
        return np.full(size, dist.degrees[0], dtype=np.int64)
    return rng.choice(np.asarray(dist.degrees, dtype=np.int64), size=size, p=dist.probabilities)


def build_frame(
    n_users: int,
    n_slots: int,
    dist: DegreeDistribution,
    profiles: Mapping[int, CodeProfile],
    rng: np.random.Generator,
) -> Tuple[FrameState, List[UserTransmission]]:
    """
    Draw a random frame.

    Users are numbered 1..n_users. Each draws a degree, then a uniform random
    subset of that many distinct slots; both ledgers of the returned frame
    hold every placement.
    """
    if n_users < 0:
        raise FrameConstructionError(f"Number of users must be >= 0, got {n_users}")
    if n_slots < 1:
        raise FrameConstructionError(f"Number of slots must be >= 1, got {n_slots}")
    if dist.max_degree > n_slots:
        raise FrameConstructionError(
            f"Degree {dist.max_degree} cannot be placed on {n_slots} distinct slots"
        )
    missing = [d for d in dist.support if d not in profiles]
    if missing:
        raise FrameConstructionError(f"No code profile for degrees {missing}")

    frame = FrameState(n_slots=n_slots)
    if n_users == 0:
        return frame, []

    degrees = sample_degrees(dist, rng, n_users)
    # First d columns of a random permutation per row: a uniform d-subset without replacement.
    order = np.argsort(rng.random((n_users, n_slots)), axis=1)[:, : dist.max_degree]

    users: List[UserTransmission] = []
    for row, degree in enumerate(degrees.tolist()):
        slots = tuple(sorted(order[row, :degree].tolist()))
        user = UserTransmission(
            user_id=row + 1,
            degree=degree,
            slots=slots,
            profile=profiles[degree],
        )
        frame.place(user)
        users.append(user)
    return frame, users


def frame_from_placements(
    n_slots: int,
    placements: Mapping[int, Sequence[int]],
    profiles: Mapping[int, CodeProfile],
) -> Tuple[FrameState, List[UserTransmission]]:
    """Build a frame from explicit ``user_id -> slots`` placements (users in id order)."""
    users: List[UserTransmission] = []
    for user_id in sorted(placements):
        slots = tuple(placements[user_id])
        degree = len(slots)
        if degree not in profiles:
            raise FrameConstructionError(f"User {user_id}: no code profile for degree {degree}")
        if len(set(slots)) != degree:
            raise FrameConstructionError(f"User {user_id} places two bursts on one slot: {slots}")
        if any(not 0 <= s < n_slots for s in slots):
            raise FrameConstructionError(f"User {user_id}: slot outside [0, {n_slots}) in {slots}")
        users.append(
            UserTransmission(user_id=user_id, degree=degree, slots=slots, profile=profiles[degree])
        )
    return FrameState.from_users(n_slots, users), users


def config_of(user: UserTransmission, frame: FrameState, layer: Layer) -> InterferenceConfig:
    """Per-burst count of OTHER users still present on the given layer."""
    sets = frame.layer(layer)
    uid = user.user_id
    return InterferenceConfig(
        tuple(len(sets[s]) - (uid in sets[s]) for s in user.slots)
    )


def default_profiles(
    degrees: Iterable[int],
    info_bits: int = DEFAULT_INFO_BITS,
    modulation_order: int = DEFAULT_MODULATION_ORDER,
) -> Dict[int, CodeProfile]:
    """MuSCA profile family: R_d = 1/(2 N_b), code ``turbo_r1{2 N_b}``."""
    return {
        d: CodeProfile.musca_default(d, info_bits=info_bits, modulation_order=modulation_order)
        for d in degrees
    }


def replica_profiles(
    degrees: Iterable[int],
    info_bits: int = DEFAULT_INFO_BITS,
    modulation_order: int = DEFAULT_MODULATION_ORDER,
) -> Dict[int, CodeProfile]:
    """Replica family (sa, crdsa, irsa): N_b copies of a rate-1/2 codeword."""
    return {
        d: CodeProfile.replica(d, info_bits=info_bits, modulation_order=modulation_order)
        for d in degrees
    }


def signalling_length_bits(n_slots: int, degree: int, signalling_rate: Fraction) -> int:
    """
    Coded signalling field length: ceil(log2 N_s) pointer bits for each of the
    N_b - 1 other bursts, expanded by the signalling code of rate R_s.
    """
    if n_slots < 1 or degree < 1:
        raise ValueError("n_slots and degree must be >= 1")
    rate = Fraction(signalling_rate)
    if not 0 < rate <= 1:
        raise ValueError(f"Signalling rate must lie in (0, 1], got {rate}")
    pointer_bits = (n_slots - 1).bit_length()
    return math.ceil(Fraction(pointer_bits * (degree - 1)) / rate)


def data_field_symbols(profile: CodeProfile) -> int:
    """L_d = k / (R_d N_b log2 M) symbols per burst."""
    return int(profile.data_field_symbols_exact)


def signalling_overhead(profile: CodeProfile, n_slots: int) -> float:
    """Share of a burst occupied by the signalling field (BPSK, one bit per symbol)."""
    l_s = signalling_length_bits(n_slots, profile.degree, profile.signalling_rate)
    return l_s / (l_s + data_field_symbols(profile))


class FrameConstructionError(Exception):
    """Raised when a frame cannot be built from the requested parameters."""
    pass
