"""Dialogue data model and canonical text serialization.

A dialogue is an ordered, non-empty list of turns; a turn is an optional
speaker plus one or more sentences. Serialization is the single place where
turns become text, which keeps token accounting additive: tokenizing a
serialized dialogue yields exactly the concatenation of the per-turn tokens,
speaker prefixes included.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

MASK = "[MASK]"
MASK_SPEAKER = "[MASK_SPEAKER]"
TURN_SEPARATOR = "\n"
SPEAKER_DELIMITER = ": "

_SENTENCE_BREAK = re.compile(r"(?<=[.!?]) ")


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization. Runs of whitespace collapse; no token is empty."""
    return text.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def split_sentences(utterance: str) -> list[str]:
    """Split an utterance after sentence-final ``.``, ``!`` or ``?`` plus a space.

    The rule is deliberately dumb and lossless: joining the parts with single
    spaces reproduces the whitespace-normalized input. A trailing fragment
    without terminal punctuation is kept as its own sentence. Abbreviations
    such as "Mr. Smith" do split; callers that care should pre-clean.
    """
    normalized = " ".join(utterance.split())
    if not normalized:
        raise ValueError("utterance is empty")
    return _SENTENCE_BREAK.split(normalized)


@dataclass(frozen=True)
class Turn:
    """One turn: an optional speaker name and a non-empty tuple of sentences.

    Sentences are whitespace-normalized on construction. Speakers may not
    contain the turn separator (newline) or a colon, so the serialized form
    stays parseable.
    """

    speaker: str | None
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.speaker is not None:
            cleaned_speaker = " ".join(self.speaker.split())
            if not cleaned_speaker:
                raise ValueError("speaker is present but empty")
            if ":" in cleaned_speaker:
                raise ValueError(f"speaker contains a colon: {cleaned_speaker!r}")
            object.__setattr__(self, "speaker", cleaned_speaker)
        if not self.sentences:
            raise ValueError("turn has no sentences")
        cleaned = tuple(" ".join(s.split()) for s in self.sentences)
        if any(not s for s in cleaned):
            raise ValueError("turn contains an empty sentence")
        object.__setattr__(self, "sentences", cleaned)

    @property
    def utterance(self) -> str:
        return " ".join(self.sentences)


@dataclass(frozen=True)
class Dialogue:
    """A non-empty turn sequence with a corpus-unique id."""

    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("dialogue id is empty")
        if not self.turns:
            raise ValueError(f"dialogue {self.id!r} has no turns")
        object.__setattr__(self, "turns", tuple(self.turns))


def serialize_turn(turn: Turn) -> str:
    """Render one turn as a single line: ``speaker: utterance`` or bare text."""
    if turn.speaker is None:
        return turn.utterance
    return f"{turn.speaker}{SPEAKER_DELIMITER}{turn.utterance}"


def turn_token_count(turn: Turn) -> int:
    """Number of whitespace tokens in the serialized turn, speaker included."""
    return len(tokenize(serialize_turn(turn)))


def serialize_dialogue(turns: Sequence[Turn]) -> str:
    if not turns:
        raise ValueError("cannot serialize an empty turn sequence")
    return TURN_SEPARATOR.join(serialize_turn(t) for t in turns)


def parse_turn_line(line: str) -> Turn:
    """Inverse of serialize_turn for one line.

    The first ``": "`` separates speaker from utterance. A line without it,
    or whose head would be an illegal speaker name, is a speakerless turn.
    """
    stripped = line.strip()
    if not stripped:
        raise ValueError("blank turn line")
    head, sep, rest = stripped.partition(SPEAKER_DELIMITER)
    if sep and head and ":" not in head and rest.strip():
        return Turn(head, tuple(split_sentences(rest)))
    return Turn(None, tuple(split_sentences(stripped)))


def parse_dialogue_text(text: str) -> list[Turn]:
    """Parse a serialized dialogue back into turns, one line per turn."""
    lines = text.split(TURN_SEPARATOR)
    if not lines or not any(line.strip() for line in lines):
        raise ValueError("dialogue text is empty")
    return [parse_turn_line(line) for line in lines]
