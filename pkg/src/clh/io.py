"""JSONL reading/writing, file digests and run manifests."""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import os
import tempfile
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any

from clh.errors import InvalidRecord, TruncatedFile


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no whitespace, UTF-8 kept as-is."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def iter_jsonl(
    stream: IO[bytes] | IO[str] | Iterable[str] | Iterable[bytes], strict_tail: bool = False
) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, record)`` for every non-blank line.

    With ``strict_tail`` a final line lacking its newline is treated as a
    partial write and raises :class:`TruncatedFile`.
    """
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        if strict_tail and not line.endswith("\n"):
            raise TruncatedFile(f"line {lineno}: truncated final line")
        try:
            yield lineno, json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"line {lineno}: invalid JSON ({exc.msg})") from exc


@contextlib.contextmanager
def open_text(source: str | os.PathLike | IO[str]) -> Iterator[IO[str]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield fh
    else:
        yield source


def read_jsonl(path: str | os.PathLike, strict_tail: bool = True) -> list[Any]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [rec for _, rec in iter_jsonl(fh, strict_tail=strict_tail)]


@contextlib.contextmanager
def atomic_writer(path: str | os.PathLike) -> Iterator[IO[str]]:
    """Write to a sibling temp file and rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | os.PathLike, records: Iterable[Any]) -> int:
    n = 0
    with atomic_writer(path) as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")  # whole line in one write
            n += 1
    return n


def write_json(path: str | os.PathLike, obj: Any) -> None:
    with atomic_writer(path) as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n")


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    """Provenance for an output artifact.

    ``hash`` covers everything except the timestamps, so two runs with the
    same config and inputs share it.
    """

    config_hash: str
    engine_version: str
    inputs: dict[str, str] = field(default_factory=dict)
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None

    @property
    def hash(self) -> str:
        body = {"config": self.config_hash, "engine": self.engine_version, "inputs": self.inputs}
        return text_digest(dumps(body))[:16]

    @classmethod
    def for_inputs(cls, config_hash: str, paths: dict[str, str | os.PathLike | None]) -> RunManifest:
        from clh import __version__

        inputs = {name: file_digest(p) for name, p in sorted(paths.items()) if p and Path(p).exists()}
        return cls(config_hash=config_hash, engine_version=__version__, inputs=inputs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": "clh.manifest/1",
            "hash": self.hash,
            "config_hash": self.config_hash,
            "engine_version": self.engine_version,
            "inputs": dict(self.inputs),
            "started": self.started,
            "finished": self.finished,
        }

    def write(self, path: str | os.PathLike) -> None:
        self.finished = datetime.now(timezone.utc).isoformat()
        write_json(path, self.to_dict())


def as_text_stream(data: bytes | str) -> IO[str]:
    return io.StringIO(data.decode("utf-8") if isinstance(data, bytes) else data)
