"""Line-delimited JSON files (optionally gzipped) with deterministic bytes."""

from __future__ import annotations

import gzip
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def dumps(record: Any) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        if "r" in mode:
            return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
        # mtime=0 and no filename keep the gzip header reproducible
        raw = open(path, "wb" if "w" in mode else "ab")
        return io.TextIOWrapper(gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0), encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="\n")


class MalformedRecord(ValueError):
    pass


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(f"{path}:{lineno}: {exc.msg}") from None


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with _open_text(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
