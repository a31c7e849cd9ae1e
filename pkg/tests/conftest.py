import random

import pytest

from nesscore.score import SILENCE, ExpressiveFrame, ExpressiveScore


def random_synthesizable_frame(rng: random.Random) -> ExpressiveFrame:
    """A valid frame whose notes are all producible by the hardware timers.

    Pulse MIDI 32 is part of the modeling alphabet but has no 11-bit timer,
    so synthesizable pulse notes start at 33.
    """
    def pulse():
        if rng.random() < 0.35:
            return (0, 0, 0)
        return (rng.randint(33, 108), rng.randint(1, 15), rng.randint(0, 3))

    p1, p2 = pulse(), pulse()
    tr = rng.randint(21, 108) if rng.random() >= 0.35 else 0
    if rng.random() < 0.35:
        no = (0, 0, 0)
    else:
        no = (rng.randint(1, 16), rng.randint(1, 15), rng.randint(0, 1))
    return ExpressiveFrame(*p1, *p2, tr, *no)


def random_score(rng: random.Random, n_frames: int, rate_hz: float = 24.0,
                 hold: float = 0.6) -> ExpressiveScore:
    """Random valid score with note-length structure (frames tend to hold)."""
    frames = []
    current = SILENCE
    for _ in range(n_frames):
        if not frames or rng.random() >= hold:
            current = random_synthesizable_frame(rng)
        frames.append(current)
    return ExpressiveScore(rate_hz=rate_hz, frames=frames)


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
