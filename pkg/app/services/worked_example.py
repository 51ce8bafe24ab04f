"""
Four users on three slots, decoded with the 5 dB anchor table.

Users 1-3 have degree 2, user 4 degree 3. Before any cancellation every
slot is collided and user 4 sees [1 2 3]. With every draw forced to
succeed the decoder locates users 1, 4, 2, 3 and then decodes user 4 at
[1 2 3], user 1 at [0 2], user 2 at [1 1] and user 3 at [0 0].
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.schemas import DecodeEventModel, DecodePolicy, ExampleRun
from app.services.decoder import DecodeReport, decode_frame
from app.services.frame_builder import default_profiles, frame_from_placements
from app.services.per_model import builtin_anchor_table

logger = logging.getLogger(__name__)

EXAMPLE_SNR_DB = 5.0
EXAMPLE_SLOTS = 3
EXAMPLE_PLACEMENTS: Dict[int, Tuple[int, ...]] = {
    1: (0, 2),
    2: (1, 2),
    3: (1, 2),
    4: (0, 1, 2),
}

# (phase, user, configuration) of the forced-success run
REFERENCE_TRACE: Tuple[Tuple[str, int, str], ...] = (
    ("locate", 1, "[1]"),
    ("locate", 4, "[0]"),
    ("locate", 2, "[1]"),
    ("locate", 3, "[0]"),
    ("data", 4, "[1 2 3]"),
    ("data", 1, "[0 2]"),
    ("data", 2, "[1 1]"),
    ("data", 3, "[0 0]"),
)


def build_example():
    return frame_from_placements(EXAMPLE_SLOTS, EXAMPLE_PLACEMENTS, default_profiles([2, 3]))


def run_example(forced: bool, seed: Optional[int] = None) -> Tuple[ExampleRun, DecodeReport]:
    """Decode the scenario once; ``seed`` drives the stochastic run."""
    frame, users = build_example()
    policy = DecodePolicy(forced_success=forced)
    rng = None if forced else np.random.default_rng(seed)
    report = decode_frame(frame, users, builtin_anchor_table(), EXAMPLE_SNR_DB, policy, rng)
    trace = tuple((e.phase, e.user_id, str(e.config)) for e in report.events)
    run = ExampleRun(
        mode="forced-success" if forced else "stochastic",
        events=[DecodeEventModel(**e.to_dict()) for e in report.events],
        decoded=sorted(report.decoded),
        deadlock=report.deadlock,
        matches_reference=trace == REFERENCE_TRACE and len(report.decoded) == len(users),
    )
    return run, report


def run_both(seed: Optional[int] = None) -> List[ExampleRun]:
    forced, _ = run_example(forced=True)
    stochastic, _ = run_example(forced=False, seed=seed)
    if not forced.matches_reference:
        logger.error("Forced-success run deviates from the reference trace")
    return [forced, stochastic]


def format_run(run: ExampleRun) -> List[str]:
    lines = [f"== {run.mode} =="]
    for event in run.events:
        outcome = "ok" if event.success else "FAIL"
        draw = "" if event.draw is None else f" draw={event.draw:.6f}"
        lines.append(
            f"{event.phase:<6} user {event.user_id} config {event.config:<8} "
            f"per={event.per_used:.6g}{draw} {outcome}"
        )
    lines.append(f"decoded: {run.decoded}  deadlock: {run.deadlock}")
    if run.mode == "forced-success":
        lines.append(f"matches reference: {run.matches_reference}")
    return lines
