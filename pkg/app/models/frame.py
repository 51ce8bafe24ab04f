"""Per-frame state shared by the frame builder and the SIC decoder.

These are plain slotted dataclasses rather than pydantic models: a Monte Carlo
point builds and decodes tens of thousands of frames, each holding a hundred
or more users.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Final, Iterable, List, Set, Tuple

from app.models.schemas import CodeProfile

# Marker for a burst with more interferers than the erasure threshold.
ERASED: Final = -1


def _sort_key(count: int) -> Tuple[bool, int]:
    return (count == ERASED, count)


def _weight(count: int, ceiling: float) -> float:
    return ceiling if count == ERASED else float(count)


class Layer(str, Enum):
    """Interference ledger a burst field lives on."""
    SIGNALLING = "signalling"
    DATA = "data"


@dataclass(frozen=True, slots=True)
class InterferenceConfig:
    """Per-burst interferer counts of one user, canonically sorted.

    Erased components (see ``erase``) are stored as ``ERASED`` and sort after
    every count, so ``[2 1 3]`` and ``[1 2 3]`` compare equal and ``[3 1 2]``
    erased at threshold 2 reads ``[1 2 E]``.
    """
    counts: Tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise ValueError("InterferenceConfig needs at least one burst")
        if any(c < 0 and c != ERASED for c in counts):
            raise ValueError(f"Negative interferer count in {counts}")
        object.__setattr__(self, "counts", tuple(sorted(counts, key=_sort_key)))

    @classmethod
    def of(cls, *counts: int) -> "InterferenceConfig":
        return cls(tuple(counts))

    @classmethod
    def parse(cls, text: str) -> "InterferenceConfig":
        """Parse ``1|2|E`` or ``[1 2 E]``."""
        cleaned = text.strip().strip("[]").replace("|", " ").split()
        return cls(tuple(ERASED if tok.upper() == "E" else int(tok) for tok in cleaned))

    def __reduce__(self):
        return (type(self), (self.counts,))

    def __len__(self) -> int:
        return len(self.counts)

    def __str__(self) -> str:
        return "[" + " ".join("E" if c == ERASED else str(c) for c in self.counts) + "]"

    def to_field(self) -> str:
        """Form used in PER table files (components joined by '|')."""
        return "|".join("E" if c == ERASED else str(c) for c in self.counts)

    @property
    def degree(self) -> int:
        return len(self.counts)

    @property
    def has_erasure(self) -> bool:
        return ERASED in self.counts

    @property
    def fully_erased(self) -> bool:
        return all(c == ERASED for c in self.counts)

    def erase(self, threshold: int) -> "InterferenceConfig":
        """Replace every count above ``threshold`` by the erased marker."""
        if all(c <= threshold for c in self.counts):
            return self
        return InterferenceConfig(tuple(ERASED if c > threshold else c for c in self.counts))

    def dominates(self, other: "InterferenceConfig") -> bool:
        """Componentwise >= after canonical sort; erased ranks above any count."""
        if len(self.counts) != len(other.counts):
            return False
        inf = float("inf")
        return all(_weight(a, inf) >= _weight(b, inf) for a, b in zip(self.counts, other.counts))

    def strictly_improves_on(self, other: "InterferenceConfig") -> bool:
        """True when ``other`` dominates this config and they differ."""
        return self != other and other.dominates(self)

    def distance(self, other: "InterferenceConfig", erased_weight: float) -> float:
        """L1 distance with erased components weighted ``erased_weight``."""
        return sum(
            abs(_weight(a, erased_weight) - _weight(b, erased_weight))
            for a, b in zip(self.counts, other.counts)
        )


@dataclass(slots=True)
class UserTransmission:
    """One user's bursts in a frame and its decoding status."""
    user_id: int
    degree: int
    slots: Tuple[int, ...]
    profile: CodeProfile
    located: bool = False
    decoded: bool = False

    def __post_init__(self) -> None:
        if len(self.slots) != self.degree:
            raise ValueError(
                f"User {self.user_id}: {len(self.slots)} slots for degree {self.degree}"
            )
        if len(set(self.slots)) != len(self.slots):
            raise ValueError(f"User {self.user_id} places two bursts on one slot: {self.slots}")


@dataclass(slots=True)
class FrameState:
    """Per-slot interferer sets, one ledger for signalling fields and one for data."""
    n_slots: int
    sig_interferers: List[Set[int]] = field(default_factory=list)
    data_interferers: List[Set[int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.n_slots < 1:
            raise ValueError("A frame needs at least one slot")
        if not self.sig_interferers:
            self.sig_interferers = [set() for _ in range(self.n_slots)]
        if not self.data_interferers:
            self.data_interferers = [set() for _ in range(self.n_slots)]

    def layer(self, layer: Layer) -> List[Set[int]]:
        return self.sig_interferers if layer is Layer.SIGNALLING else self.data_interferers

    def place(self, user: UserTransmission) -> None:
        for slot in user.slots:
            if not 0 <= slot < self.n_slots:
                raise ValueError(f"Slot {slot} outside frame of {self.n_slots} slots")
            self.sig_interferers[slot].add(user.user_id)
            self.data_interferers[slot].add(user.user_id)

    def occupancy(self, layer: Layer) -> Tuple[int, ...]:
        return tuple(len(s) for s in self.layer(layer))

    def interferer_mass(self) -> int:
        return sum(len(s) for s in self.sig_interferers) + sum(len(s) for s in self.data_interferers)

    def copy(self) -> "FrameState":
        return FrameState(
            n_slots=self.n_slots,
            sig_interferers=[set(s) for s in self.sig_interferers],
            data_interferers=[set(s) for s in self.data_interferers],
        )

    @classmethod
    def from_users(cls, n_slots: int, users: Iterable[UserTransmission]) -> "FrameState":
        frame = cls(n_slots=n_slots)
        for user in users:
            frame.place(user)
        return frame
