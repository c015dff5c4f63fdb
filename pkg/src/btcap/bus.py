"""Deterministic simulated network and team membership.

Messages are value copies: payloads are serialized to JSON when sent and
parsed again on delivery. Latency is constant, so per-channel FIFO order
falls out of the global send order.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

BUS = "bus"  # sender id of membership notices
EVENTS = ("join", "leave", "fail", "recover")
_EPS = 1e-9


class BusError(Exception):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TeamMessage:
    seq: int
    kind: str
    sender: str
    recipient: str
    payload: str
    send_time: float
    deliver_time: float

    def body(self):
        return json.loads(self.payload)

    def log_line(self) -> str:
        head = dumps({
            "deliver_time": self.deliver_time,
            "kind": self.kind,
            "recipient": self.recipient,
            "send_time": self.send_time,
            "sender": self.sender,
            "seq": self.seq,
        })
        return head[:-1] + ',"payload":' + self.payload + "}"


@dataclass
class Membership:
    live: set[str] = field(default_factory=set)
    epoch: int = 0


class TeamBus:
    def __init__(self, latency: float = 0.5):
        self.latency = latency
        self.membership = Membership()
        self.pending: deque[TeamMessage] = deque()
        self.log: list[str] = []
        self.dropped = 0
        self._seq = 0

    # -- sending ---------------------------------------------------------------

    def send(self, kind: str, sender: str, recipient: str, payload, now: float) -> TeamMessage | None:
        if sender != BUS and sender not in self.membership.live:
            log.info("dropping %s from dead sender %s", kind, sender)
            self.dropped += 1
            return None
        self._seq += 1
        msg = TeamMessage(self._seq, kind, sender, recipient, dumps(payload), now, now + self.latency)
        self.pending.append(msg)
        return msg

    def broadcast(self, kind: str, sender: str, payload, now: float) -> list[TeamMessage]:
        out = []
        for r in sorted(self.membership.live - {sender}):
            m = self.send(kind, sender, r, payload, now)
            if m is not None:
                out.append(m)
        return out

    def deliver(self, now: float) -> dict[str, list[TeamMessage]]:
        due: dict[str, list[TeamMessage]] = {}
        while self.pending and self.pending[0].deliver_time <= now + _EPS:
            msg = self.pending.popleft()
            if msg.recipient not in self.membership.live:
                self.dropped += 1
                continue
            due.setdefault(msg.recipient, []).append(msg)
            self.log.append(msg.log_line())
        return due

    # -- membership ------------------------------------------------------------

    def nearby(self, world: str) -> list[str]:
        return sorted(self.membership.live - {world})

    def apply_event(self, event: str, world: str, now: float) -> Membership:
        live = self.membership.live
        if event not in EVENTS:
            raise BusError(f"unknown membership event {event!r}")
        if event in ("join", "recover"):
            if world in live:
                raise BusError(f"{world!r} is already a team member")
            live.add(world)
        else:
            if world not in live:
                raise BusError(f"{world!r} is not a team member")
            live.discard(world)
            # in-flight traffic to the departed robot is lost
            kept = deque(m for m in self.pending if m.recipient != world)
            self.dropped += len(self.pending) - len(kept)
            self.pending = kept
        self.membership.epoch += 1
        self.broadcast("MEMBER_CHANGE", BUS, {
            "event": event,
            "world": world,
            "epoch": self.membership.epoch,
            "live": sorted(live),
        }, now)
        return self.membership

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.log:
                fh.write(line + "\n")
