"""Shared fixtures and scripted randomness for the test suite."""

from __future__ import annotations

import json
import random

import pytest

from dialogkit.core import Dialogue, Turn


class ScriptedRng:
    """Duck-typed stand-in for random.Random with predetermined draws.

    Feeds scripted values to .random() and .randrange() and fails loudly if
    an op consumes more draws than scripted, which doubles as a check on
    the documented draw order.
    """

    def __init__(self, uniforms=(), ranges=()):
        self.uniforms = list(uniforms)
        self.ranges = list(ranges)

    def random(self) -> float:
        if not self.uniforms:
            raise AssertionError("op consumed an unscripted uniform draw")
        return self.uniforms.pop(0)

    def randrange(self, stop: int) -> int:
        if not self.ranges:
            raise AssertionError("op consumed an unscripted randrange draw")
        value = self.ranges.pop(0)
        if not 0 <= value < stop:
            raise AssertionError(f"scripted draw {value} outside range({stop})")
        return value

    def assert_exhausted(self) -> None:
        assert not self.uniforms and not self.ranges, (
            f"unconsumed draws: uniforms={self.uniforms} ranges={self.ranges}"
        )


def make_turn(speaker, text) -> Turn:
    from dialogkit.core import split_sentences

    return Turn(speaker, tuple(split_sentences(text)))


def make_dialogue(dialogue_id: str, *turns) -> Dialogue:
    """Build a dialogue from (speaker, text) pairs."""
    return Dialogue(dialogue_id, tuple(make_turn(s, t) for s, t in turns))


def synthetic_dialogue(dialogue_id: str, turn_count: int, rng: random.Random) -> Dialogue:
    """A dialogue of two-sentence turns with rotating speakers and varied
    lengths, used for bulk statistical checks."""
    speakers = ("Ann", "Ben", "Cal", "Dee")
    turns = []
    for index in range(turn_count):
        first = " ".join(
            f"w{rng.randrange(200)}" for _ in range(rng.randrange(4, 9))
        )
        second = " ".join(
            f"w{rng.randrange(200)}" for _ in range(rng.randrange(3, 7))
        )
        turns.append(
            Turn(speakers[index % len(speakers)], (first + ".", second + "."))
        )
    return Dialogue(dialogue_id, tuple(turns))


def dialogue_to_json_line(dialogue: Dialogue) -> str:
    return json.dumps(
        {
            "id": dialogue.id,
            "turns": [
                {"speaker": t.speaker, "utterance": t.utterance}
                for t in dialogue.turns
            ],
        },
        ensure_ascii=False,
    )


@pytest.fixture
def toy_dialogue() -> Dialogue:
    return make_dialogue(
        "toy-1",
        ("Tom", "The weather is good today! Do you have any plans?"),
        ("Sam", "We could go to the park. It might rain though."),
        ("Bob", "I will bring an umbrella."),
    )
