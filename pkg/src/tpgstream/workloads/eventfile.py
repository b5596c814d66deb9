"""CSV event files: ``ts,type,arg,...`` lines under ``#``-prefixed header lines."""

from __future__ import annotations

import csv
import io

from ..runtime import Event
from .generators import WorkloadError


def write_events(path, events, header: dict | None = None):
    with open(path, "w", newline="") as fh:
        fh.write(dumps_events(events, header))


def dumps_events(events, header: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    for e in events:
        w.writerow([e.ts, e.etype, *e.args])
    return buf.getvalue()


def loads_events(text: str) -> tuple[list[Event], dict]:
    header, events = {}, []
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k.strip()] = v.strip()
        elif line.strip():
            rows.append(line)
    for n, row in enumerate(csv.reader(rows)):
        try:
            ts = int(row[0])
            args = tuple(int(x) for x in row[2:])
        except (ValueError, IndexError):
            raise WorkloadError(f"bad event line {rows[n]!r}") from None
        etype = row[1]
        group = args[0] if etype == "tp" and args else 0
        events.append(Event(ts, ts, etype, args, group, n))
    return events, header


def read_events(path) -> tuple[list[Event], dict]:
    with open(path) as fh:
        return loads_events(fh.read())
