"""Versioned keyed-text persistence for fitted artifacts.

Every artifact file starts with ``costshift-artifact <version>`` followed by
``kind <name>``. The body is a sequence of ``key value...`` lines; floats are
written with ``repr`` so that reloading reproduces them bit for bit and a
second save is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ArtifactError

MAGIC = "costshift-artifact"
FORMAT_VERSION = 1


def fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def parse_floats(tokens: list[str], context: str) -> np.ndarray:
    try:
        return np.asarray([float(t) for t in tokens], dtype=np.float64)
    except ValueError:
        raise ArtifactError(f"{context}: expected numeric values") from None


def write_artifact(path, kind: str, body_lines: list[str]) -> None:
    path = Path(path)
    lines = [f"{MAGIC} {FORMAT_VERSION}", f"kind {kind}"]
    lines.extend(body_lines)
    path.write_text("\n".join(lines) + "\n")


def read_artifact(path, expected_kind: str) -> list[list[str]]:
    """Return the body of an artifact as token lists, validating the header."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"expected artifact file is missing: {path}")
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise ArtifactError(f"{path}: truncated artifact")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise ArtifactError(f"{path}: not a {MAGIC} file")
    try:
        version = int(head[1])
    except ValueError:
        raise ArtifactError(f"{path}: bad format version {head[1]!r}") from None
    if version != FORMAT_VERSION:
        raise ArtifactError(
            f"{path}: format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})"
        )
    kind_line = lines[1].split()
    if len(kind_line) != 2 or kind_line[0] != "kind":
        raise ArtifactError(f"{path}: missing kind line")
    if kind_line[1] != expected_kind:
        raise ArtifactError(
            f"{path}: artifact kind {kind_line[1]!r}, expected {expected_kind!r}"
        )
    return [ln.split() for ln in lines[2:] if ln.strip()]


class BodyReader:
    """Sequential cursor over artifact body lines with keyword checks."""

    def __init__(self, rows: list[list[str]], path):
        self.rows = rows
        self.pos = 0
        self.path = str(path)

    def done(self) -> bool:
        return self.pos >= len(self.rows)

    def peek_key(self) -> str | None:
        if self.done():
            return None
        return self.rows[self.pos][0]

    def take(self, key: str) -> list[str]:
        if self.done():
            raise ArtifactError(f"{self.path}: unexpected end of body, wanted {key!r}")
        row = self.rows[self.pos]
        if row[0] != key:
            raise ArtifactError(
                f"{self.path}: expected key {key!r}, found {row[0]!r}"
            )
        self.pos += 1
        return row[1:]

    def take_floats(self, key: str) -> np.ndarray:
        return parse_floats(self.take(key), f"{self.path}: {key}")

    def take_int(self, key: str) -> int:
        toks = self.take(key)
        if len(toks) != 1:
            raise ArtifactError(f"{self.path}: {key} wants a single integer")
        try:
            return int(toks[0])
        except ValueError:
            raise ArtifactError(f"{self.path}: {key} must be an integer") from None

    def take_float(self, key: str) -> float:
        vals = self.take_floats(key)
        if vals.shape[0] != 1:
            raise ArtifactError(f"{self.path}: {key} wants a single value")
        return float(vals[0])

    def take_str(self, key: str) -> str:
        toks = self.take(key)
        if len(toks) != 1:
            raise ArtifactError(f"{self.path}: {key} wants a single token")
        return toks[0]

    def take_tokens(self, key: str) -> list[str]:
        return self.take(key)
