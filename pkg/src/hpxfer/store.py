"""Append-only trial stores and report envelopes.

Trial stores are newline-delimited JSON, fsynced per append, with a header
line carrying the search configuration so a store alone is enough to resume.
Readers tolerate a truncated final line (a crash mid-append) but treat any
earlier corruption as fatal.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

__all__ = ["TrialStore", "ReportEnvelope", "canonical_json", "config_hash"]


def canonical_json(obj: Any) -> str:
    """Platform-stable serialization: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


class TrialStore:
    """Single-writer append-only record log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = None

    def open_for_append(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TrialStore":
        self.open_for_append()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def append(self, record: dict) -> None:
        if self._fh is None:
            self.open_for_append()
        self._fh.write(canonical_json(record) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def write_header(self, header: dict) -> None:
        self.append({"kind": "header", **header})

    def load(self) -> tuple[dict | None, list[dict]]:
        """Read (header, records); drop a half-written final line with a warning."""
        if not self.path.exists():
            return None, []
        raw = self.path.read_text(encoding="utf-8")
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        parsed: list[dict] = []
        for i, line in enumerate(lines):
            try:
                parsed.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1 and not raw.endswith("\n"):
                    warnings.warn(
                        f"dropping truncated final record in {self.path}", RuntimeWarning
                    )
                    break
                raise ValueError(f"corrupt record at line {i + 1} of {self.path}")
        header = None
        if parsed and parsed[0].get("kind") == "header":
            header = parsed.pop(0)
        return header, parsed


@dataclass(frozen=True)
class ReportEnvelope:
    """Wrapper written around every tool report."""

    tool: str
    tool_version: str
    config_hash: str
    seeds: dict[str, int]
    created_unix: float
    payload: dict
    effective_config: dict = field(default_factory=dict)

    @classmethod
    def wrap(
        cls,
        tool: str,
        payload: dict,
        effective_config: dict,
        seeds: dict[str, int] | None = None,
        tool_version: str = "0.1.0",
    ) -> "ReportEnvelope":
        return cls(
            tool=tool,
            tool_version=tool_version,
            config_hash=config_hash(effective_config),
            seeds=seeds or {},
            created_unix=time.time(),
            payload=payload,
            effective_config=effective_config,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "tool": self.tool,
                "tool_version": self.tool_version,
                "config_hash": self.config_hash,
                "seeds": self.seeds,
                "created_unix": self.created_unix,
                "effective_config": self.effective_config,
                "payload": self.payload,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ReportEnvelope":
        doc = json.loads(text)
        return cls(
            tool=doc["tool"],
            tool_version=doc["tool_version"],
            config_hash=doc["config_hash"],
            seeds=doc["seeds"],
            created_unix=doc["created_unix"],
            payload=doc["payload"],
            effective_config=doc["effective_config"],
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
