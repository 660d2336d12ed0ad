"""Splitting model output into reasoning and answer, and reading the answer."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass

from clh.errors import NoAnswerTag, NoIntegers

logger = logging.getLogger(__name__)

# An <answer> span that contains no nested opener: the innermost one.
_ANSWER = re.compile(r"<answer>((?:(?!<answer>).)*?)</answer>", re.DOTALL)
_THINK_TAGS = re.compile(r"</?think>")
_INT = re.compile(r"[0-9]+")  # ASCII digits only


@dataclass(frozen=True)
class GenerationResult:
    raw: str
    thinking: str | None
    answer_payload: str | None


def parse_generation(raw: str) -> GenerationResult:
    """Take the last innermost ``<answer>`` span; everything before it is reasoning."""
    matches = list(_ANSWER.finditer(raw))
    if not matches:
        thinking = _THINK_TAGS.sub("", raw).strip() or None
        return GenerationResult(raw, thinking, None)
    last = matches[-1]
    thinking = _THINK_TAGS.sub("", raw[: last.start()]).strip() or None
    return GenerationResult(raw, thinking, last.group(1))


def _payload(result: GenerationResult) -> str:
    if result.answer_payload is None:
        raise NoAnswerTag("model output has no <answer>...</answer> span")
    return result.answer_payload


def parse_ids(result: GenerationResult, max_id: int) -> tuple[list[int], int]:
    """Selected ids and the number of out-of-range ids that were dropped."""
    numbers = [int(n) for n in _INT.findall(_payload(result))]
    if not numbers:
        raise NoIntegers(f"no integer ids in answer {result.answer_payload!r}")
    if 0 in numbers:
        return [], 0
    ids: list[int] = []
    dropped = 0
    for n in numbers:
        if n > max_id:
            dropped += 1
        elif n not in ids:
            ids.append(n)
    return ids, dropped


def extract_ids(result: GenerationResult, max_id: int) -> list[int]:
    ids, dropped = parse_ids(result, max_id)
    if dropped:
        logger.warning("dropped %d id(s) above %d", dropped, max_id)
    return ids


def extract_strings(result: GenerationResult) -> list[str]:
    """Comma-separated strings; double-quoted items may contain commas."""
    payload = _payload(result).replace("\r", " ").replace("\n", " ")
    if not payload.strip():
        return []
    try:
        row = next(csv.reader([payload], skipinitialspace=True))
    except csv.Error:  # NUL bytes, oversized fields
        row = payload.split(",")
    return [item.strip() for item in row if item.strip()]


def id_constraint(max_id: int, multi: bool) -> str:
    """Regex a constrained decoder must follow: ``0`` or ids in ``1..max_id``."""
    ids = "|".join(str(i) for i in range(max_id, 0, -1))
    if not ids:
        return r"<answer>0</answer>"
    if multi:
        return rf"<answer>(?:0|(?:{ids})(?:, ?(?:{ids}))*)</answer>"
    return rf"<answer>(?:0|{ids})</answer>"


def format_strings(items: list[str]) -> str:
    """Inverse of :func:`extract_strings` for building answers."""
    buf = io.StringIO()
    csv.writer(buf, quoting=csv.QUOTE_ALL, lineterminator="").writerow(items)
    return buf.getvalue()
