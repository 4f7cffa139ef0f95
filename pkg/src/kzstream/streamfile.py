"""Text stream files: the primary interchange format.

Header line:  ``KZSTREAM v1 <d> <delta> <z> <k> <eps> <len>``
Records:      ``+ c1 .. cd [w]`` inserts, ``- c1 .. cd [w]`` deletes,
with integer coordinates in [1, delta] and optional positive integer
multiplicity w (default 1).  Insertion-only consumers reject ``-`` records;
dynamic consumers additionally require every prefix to keep nonnegative net
multiplicity per point (checked with a harness-side shadow map, not metered).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import ParseError, UsageError
from .params import ClusterParams

_HEADER = "KZSTREAM v1"


@dataclass(frozen=True)
class StreamHeader:
    d: int
    delta: int
    z: int
    k: int
    eps: float
    length: int

    def params(self, seed: int = 0, eps: float | None = None,
               k: int | None = None, z: int | None = None,
               delta: int | None = None) -> ClusterParams:
        return ClusterParams(
            k=k if k is not None else self.k,
            z=z if z is not None else self.z,
            eps=eps if eps is not None else self.eps,
            d=self.d,
            delta=delta if delta is not None else self.delta,
            seed=seed,
        )

    def line(self) -> str:
        return (f"{_HEADER} {self.d} {self.delta} {self.z} {self.k} "
                f"{self.eps!r} {self.length}")


def write_stream(path, header: StreamHeader, updates: Iterable) -> None:
    with open(path, "w") as fh:
        fh.write(header.line() + "\n")
        for point, delta in updates:
            sign = "+" if delta > 0 else "-"
            mag = abs(int(delta))
            coords = " ".join(str(int(c)) for c in point)
            if mag == 1:
                fh.write(f"{sign} {coords}\n")
            else:
                fh.write(f"{sign} {coords} {mag}\n")


def read_stream(path, insertion_only: bool = False,
                check_prefix: bool = True):
    """Parse a stream file; returns (header, updates) with updates a list of
    (point tuple, signed delta)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty stream file", line=1)
    head = lines[0].split()
    if head[:2] != _HEADER.split() or len(head) != 8:
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    try:
        header = StreamHeader(d=int(head[2]), delta=int(head[3]),
                              z=int(head[4]), k=int(head[5]),
                              eps=float(head[6]), length=int(head[7]))
    except ValueError as exc:
        raise ParseError(f"bad header field: {exc}", line=1) from exc

    updates = []
    multiplicity: dict[tuple, int] = {}
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] not in ("+", "-"):
            raise ParseError(f"record must start with + or -, got {parts[0]!r}",
                             line=ln)
        if parts[0] == "-" and insertion_only:
            raise UsageError(
                f"line {ln}: deletion record in insertion-only mode")
        body = parts[1:]
        if len(body) == header.d:
            weight = 1
        elif len(body) == header.d + 1:
            try:
                weight = int(body[-1])
            except ValueError as exc:
                raise ParseError(f"bad weight {body[-1]!r}", line=ln) from exc
            if weight < 1:
                raise ParseError(f"weight must be >= 1, got {weight}", line=ln)
            body = body[:-1]
        else:
            raise ParseError(
                f"expected {header.d} coordinates, got {len(body)}", line=ln)
        try:
            point = tuple(int(c) for c in body)
        except ValueError as exc:
            raise ParseError(f"bad coordinate: {exc}", line=ln) from exc
        for c in point:
            if not (1 <= c <= header.delta):
                raise ParseError(
                    f"coordinate {c} outside [1, {header.delta}]", line=ln)
        delta = weight if parts[0] == "+" else -weight
        if check_prefix and not insertion_only:
            m = multiplicity.get(point, 0) + delta
            if m < 0:
                raise ParseError(
                    f"net multiplicity of {point} went negative", line=ln)
            multiplicity[point] = m
        updates.append((point, delta))
    if len(updates) != header.length:
        raise ParseError(
            f"declared length {header.length} but found {len(updates)} records",
            line=1)
    return header, updates


def stream_to_text(header: StreamHeader, updates) -> str:
    out = [header.line()]
    for point, delta in updates:
        sign = "+" if delta > 0 else "-"
        mag = abs(int(delta))
        coords = " ".join(str(int(c)) for c in point)
        out.append(f"{sign} {coords}" + (f" {mag}" if mag != 1 else ""))
    return "\n".join(out) + "\n"
