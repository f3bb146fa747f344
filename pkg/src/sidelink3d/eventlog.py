"""Structured per-run event log.

Schema v1, newline-delimited JSON.  The first line is a header record
(schema version, mode, seed, config hash); every following line is one
event with a ``t`` type tag:

==========  ================================================================
``t``       fields
==========  ================================================================
``tx``      slot, veh, kind (data|request|response), f, tb, copy, link
``skip``    slot, veh, kind, f, tb, copy          (half-duplex forfeited)
``rx``      slot, rcv, snd, kind, tb, copy, ok, sinr, sig, intf, why
``tb``      slot, ev (gen|delivered|lost), tb, link, why
``sel``     slot, owner, selector, scheme, cells [[slot, f] ...], grant, pool
``grant``   slot, ev (created|extended|released), grant, link, rc, rri, cells
``hs``      slot, ev, link, info                  (handshake lifecycle)
==========  ================================================================

Events are emitted in deterministic order (slot, then the table order
above, then append order), so identical runs serialise to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

LOG_SCHEMA_VERSION = 1

_TYPE_ORDER = ("tx", "skip", "rx", "tb", "sel", "grant", "hs")


def _jnum(x: float, digits: int = 4) -> Optional[float]:
    """Round for the log; infinities map to null."""
    if x is None or math.isinf(x) or math.isnan(x):
        return None
    return round(float(x), digits)


@dataclass
class RunLog:
    """Columnar event storage; append during the run, serialise on demand."""

    header: dict = field(default_factory=dict)
    tx: list = field(default_factory=list)
    skip: list = field(default_factory=list)
    rx: list = field(default_factory=list)
    tb: list = field(default_factory=list)
    sel: list = field(default_factory=list)
    grant: list = field(default_factory=list)
    hs: list = field(default_factory=list)

    # -- appenders (hot path: plain tuples) --------------------------------

    def add_tx(self, slot, veh, kind, f, tb, copy, link):
        self.tx.append((slot, veh, kind, f, tb, copy, link))

    def add_skip(self, slot, veh, kind, f, tb, copy):
        self.skip.append((slot, veh, kind, f, tb, copy))

    def add_rx(self, slot, rcv, snd, kind, tb, copy, ok, sinr, sig, intf, why):
        self.rx.append((slot, rcv, snd, kind, tb, copy, ok, sinr, sig, intf, why))

    def add_tb(self, slot, ev, tb, link, why=""):
        self.tb.append((slot, ev, tb, link, why))

    def add_sel(self, slot, owner, selector, scheme, cells, grant, pool):
        self.sel.append((slot, owner, selector, scheme, cells, grant, pool))

    def add_grant(self, slot, ev, grant, link, rc, rri, cells):
        self.grant.append((slot, ev, grant, link, rc, rri, cells))

    def add_hs(self, slot, ev, link, info=""):
        self.hs.append((slot, ev, link, info))

    # -- serialisation ------------------------------------------------------

    def _records(self) -> Iterator[dict]:
        for slot, veh, kind, f, tb, copy, link in self.tx:
            yield {"t": "tx", "slot": slot, "veh": veh, "kind": kind, "f": f,
                   "tb": tb, "copy": copy, "link": link}
        for slot, veh, kind, f, tb, copy in self.skip:
            yield {"t": "skip", "slot": slot, "veh": veh, "kind": kind, "f": f,
                   "tb": tb, "copy": copy}
        for slot, rcv, snd, kind, tb, copy, ok, sinr, sig, intf, why in self.rx:
            yield {"t": "rx", "slot": slot, "rcv": rcv, "snd": snd, "kind": kind,
                   "tb": tb, "copy": copy, "ok": ok, "sinr": _jnum(sinr),
                   "sig": _jnum(sig), "intf": _jnum(intf), "why": why}
        for slot, ev, tb, link, why in self.tb:
            yield {"t": "tb", "slot": slot, "ev": ev, "tb": tb, "link": link,
                   "why": why}
        for slot, owner, selector, scheme, cells, grant, pool in self.sel:
            yield {"t": "sel", "slot": slot, "owner": owner, "selector": selector,
                   "scheme": scheme, "cells": [list(c) for c in cells],
                   "grant": grant, "pool": pool}
        for slot, ev, grant, link, rc, rri, cells in self.grant:
            yield {"t": "grant", "slot": slot, "ev": ev, "grant": grant,
                   "link": link, "rc": rc, "rri": rri,
                   "cells": [list(c) for c in cells]}
        for slot, ev, link, info in self.hs:
            yield {"t": "hs", "slot": slot, "ev": ev, "link": link, "info": info}

    def lines(self, include_header: bool = True) -> Iterator[str]:
        if include_header:
            head = {"t": "header", "schema": LOG_SCHEMA_VERSION, **self.header}
            yield json.dumps(head, sort_keys=True, separators=(",", ":"))
        rank = {t: i for i, t in enumerate(_TYPE_ORDER)}
        annotated = [
            (rec["slot"], rank[rec["t"]], seq, rec)
            for seq, rec in enumerate(self._records())
        ]
        annotated.sort(key=lambda a: (a[0], a[1], a[2]))
        for _, _, _, rec in annotated:
            yield json.dumps(rec, sort_keys=True, separators=(",", ":"))

    def to_jsonl(self, include_header: bool = True) -> str:
        return "\n".join(self.lines(include_header)) + "\n"

    def digest(self, include_header: bool = False) -> str:
        """SHA-256 of the serialised event stream (header excluded by default
        so runs can be compared across mode labels)."""
        h = hashlib.sha256()
        for line in self.lines(include_header):
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write(self, path: str, include_header: bool = True) -> None:
        with open(path, "w") as fh:
            for line in self.lines(include_header):
                fh.write(line)
                fh.write("\n")
