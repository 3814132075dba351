"""Corpus readers, per-record validation, and one-pass statistics.

Two input formats are supported:

* ``jsonl``: one dialogue per line,
  ``{"id": "...", "turns": [{"speaker": "Tom" | null, "utterance": "..."}]}``
* ``plain``: blocks of ``Speaker: text`` lines separated by blank lines;
  the 0-based block index (as a decimal string) becomes the dialogue id.

Readers are generators and hold at most one dialogue at a time, so corpus
size is bounded by the largest record, not the file. Malformed records
raise :class:`RecordError` carrying the line number; with ``on_error="skip"``
they are counted into ``errors_out`` and reading continues.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .core import (
    MASK,
    MASK_SPEAKER,
    Dialogue,
    Turn,
    parse_turn_line,
    serialize_dialogue,
    split_sentences,
    tokenize,
)

FORMATS = ("jsonl", "plain")


class RecordError(Exception):
    """A single corpus record failed validation."""

    def __init__(self, line_no: int, reason: str, dialogue_id: str | None = None):
        self.line_no = line_no
        self.reason = reason
        self.dialogue_id = dialogue_id
        where = f"line {line_no}"
        if dialogue_id is not None:
            where += f" (dialogue {dialogue_id!r})"
        super().__init__(f"{where}: {reason}")


def _check_no_special_tokens(text: str, line_no: int, dialogue_id: str | None) -> None:
    for token in (MASK, MASK_SPEAKER):
        if token in text:
            raise RecordError(
                line_no, f"reserved token {token} appears in corpus text", dialogue_id
            )


def _turn_from_fields(
    speaker: object, utterance: object, line_no: int, dialogue_id: str | None
) -> Turn:
    if speaker is not None and not isinstance(speaker, str):
        raise RecordError(line_no, "speaker must be a string or null", dialogue_id)
    if not isinstance(utterance, str) or not utterance.strip():
        raise RecordError(line_no, "utterance must be a non-empty string", dialogue_id)
    if speaker is not None:
        _check_no_special_tokens(speaker, line_no, dialogue_id)
    _check_no_special_tokens(utterance, line_no, dialogue_id)
    try:
        return Turn(speaker, tuple(split_sentences(utterance)))
    except ValueError as exc:
        raise RecordError(line_no, str(exc), dialogue_id) from exc


def _dialogue_from_json_line(line: str, line_no: int) -> Dialogue:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(line_no, f"invalid json: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise RecordError(line_no, "record is not a json object")
    dialogue_id = record.get("id")
    if not isinstance(dialogue_id, str) or not dialogue_id:
        raise RecordError(line_no, "missing or empty 'id'")
    turns_field = record.get("turns")
    if not isinstance(turns_field, list) or not turns_field:
        raise RecordError(line_no, "'turns' must be a non-empty list", dialogue_id)
    turns = []
    for entry in turns_field:
        if not isinstance(entry, dict) or "utterance" not in entry:
            raise RecordError(line_no, "turn entries need an 'utterance'", dialogue_id)
        turns.append(
            _turn_from_fields(entry.get("speaker"), entry["utterance"], line_no, dialogue_id)
        )
    return Dialogue(dialogue_id, tuple(turns))


def _dialogue_from_block(block: list[tuple[int, str]], block_index: int) -> Dialogue:
    dialogue_id = str(block_index)
    turns = []
    for line_no, line in block:
        _check_no_special_tokens(line, line_no, dialogue_id)
        try:
            turns.append(parse_turn_line(line))
        except ValueError as exc:
            raise RecordError(line_no, str(exc), dialogue_id) from exc
    return Dialogue(dialogue_id, tuple(turns))


def ingest(
    lines: Iterable[str],
    format: str = "jsonl",
    on_error: str = "raise",
    errors_out: list[RecordError] | None = None,
) -> Iterator[Dialogue]:
    """Stream validated dialogues out of an iterable of text lines.

    ``on_error="raise"`` aborts on the first bad record; ``"skip"`` drops it,
    appending to ``errors_out`` when given. Duplicate ids are record errors;
    the id set kept for that check is the only per-corpus state.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format {format!r}")
    if on_error not in ("raise", "skip"):
        raise ValueError(f"unknown error policy {on_error!r}")

    def emit(build, line_no: int):
        try:
            dialogue = build()
            if dialogue.id in seen_ids:
                raise RecordError(
                    line_no, f"duplicate dialogue id {dialogue.id!r}", dialogue.id
                )
        except RecordError as err:
            if on_error == "raise":
                raise
            if errors_out is not None:
                errors_out.append(err)
            return None
        seen_ids.add(dialogue.id)
        return dialogue

    seen_ids: set[str] = set()
    if format == "jsonl":
        for line_no, raw in enumerate(lines, 1):
            line = raw.strip()
            if not line:
                continue
            dialogue = emit(lambda: _dialogue_from_json_line(line, line_no), line_no)
            if dialogue is not None:
                yield dialogue
    else:
        block: list[tuple[int, str]] = []
        block_index = 0
        for line_no, raw in enumerate(lines, 1):
            line = raw.rstrip("\n")
            if line.strip():
                block.append((line_no, line))
                continue
            if block:
                pending, idx = block, block_index
                block, block_index = [], block_index + 1
                dialogue = emit(lambda: _dialogue_from_block(pending, idx), pending[0][0])
                if dialogue is not None:
                    yield dialogue
        if block:
            dialogue = emit(lambda: _dialogue_from_block(block, block_index), block[0][0])
            if dialogue is not None:
                yield dialogue


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level means. Means are None when undefined (empty corpus, or
    mean_speakers on a fully speakerless corpus)."""

    dialogue_count: int
    mean_turns: float | None
    mean_speakers: float | None
    mean_length_words: float | None

    def as_dict(self) -> dict:
        return {
            "dialogue_count": self.dialogue_count,
            "mean_turns": self.mean_turns,
            "mean_speakers": self.mean_speakers,
            "mean_length_words": self.mean_length_words,
        }


class StatsAccumulator:
    """Associative accumulator behind compute_stats.

    Sums are integers, so accumulation order cannot change the result and
    shard accumulators merge exactly. Division happens once, in finalize.
    """

    def __init__(self) -> None:
        self.dialogue_count = 0
        self.turn_total = 0
        self.speaker_total = 0
        self.word_total = 0
        self.any_speakers = False

    def add(self, dialogue: Dialogue) -> None:
        self.dialogue_count += 1
        self.turn_total += len(dialogue.turns)
        distinct = {t.speaker for t in dialogue.turns if t.speaker is not None}
        self.speaker_total += len(distinct)
        if distinct:
            self.any_speakers = True
        self.word_total += len(tokenize(serialize_dialogue(dialogue.turns)))

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        self.dialogue_count += other.dialogue_count
        self.turn_total += other.turn_total
        self.speaker_total += other.speaker_total
        self.word_total += other.word_total
        self.any_speakers = self.any_speakers or other.any_speakers
        return self

    def finalize(self) -> CorpusStats:
        if self.dialogue_count == 0:
            return CorpusStats(0, None, None, None)
        n = self.dialogue_count
        return CorpusStats(
            dialogue_count=n,
            mean_turns=self.turn_total / n,
            mean_speakers=self.speaker_total / n if self.any_speakers else None,
            mean_length_words=self.word_total / n,
        )


def compute_stats(dialogues: Iterable[Dialogue]) -> CorpusStats:
    """One streaming pass; identical to accumulating a fully loaded list."""
    acc = StatsAccumulator()
    for dialogue in dialogues:
        acc.add(dialogue)
    return acc.finalize()
