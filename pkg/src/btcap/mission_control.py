"""Per-robot execution supervision.

The requester side keeps one :class:`ExecutionRecord` per remote execution.
The executor side hosts at most one execution in its remote slot. Both sides
send HEARTBEATs while an execution is live, so either side notices when the
other disappears.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable

from .states import NodeState

log = logging.getLogger(__name__)

S = NodeState
PHASES = ("requested", "accepted", "running", "done", "failed", "lost", "rejected", "aborted")
LIVE_PHASES = ("requested", "accepted", "running")
_EPS = 1e-9


@dataclass
class ExecutionRecord:
    exec_id: str
    capability: str
    executor: str
    implementation: str
    task_id: str = ""
    interface: str = ""
    phase: str = "requested"
    last_heartbeat: float = 0.0
    outputs: dict = field(default_factory=dict)
    outputs_seq: int = 0
    root_state: NodeState | None = None
    inputs: dict = field(default_factory=dict)
    inputs_seq: int = 0
    reason: str = ""


@dataclass
class HostedExecution:
    exec_id: str
    requester: str
    capability: str
    implementation: str
    task_id: str
    interface: str
    waypoints: list
    started: float
    last_heartbeat: float
    outputs_seq: int = 0
    last_outputs: dict | None = None


def is_lost(last_heartbeat: float, now: float, timeout: float) -> bool:
    return now - last_heartbeat > timeout + _EPS


class MissionControl:
    def __init__(self, world: str, send: Callable[[str, str, dict], None],
                 heartbeat_interval: float = 1.0, heartbeat_timeout: float = 3.0, latency: float = 0.5):
        self.world = world
        self.send = send
        self.heartbeat_interval = heartbeat_interval
        self.heartbeat_timeout = heartbeat_timeout
        self.latency = latency
        self.records: dict[str, ExecutionRecord] = {}
        self.hosted: HostedExecution | None = None
        self.pending: list[dict] = []  # execution requests waiting for this tick's batch
        self.last_change = -float("inf")  # last time the slot's commitment changed
        self._next_hb = 0.0
        self._counter = 0

    # -- requester side --------------------------------------------------------

    def request(self, capability: str, executor: str, implementation: str, task_id: str, interface: str,
                context: dict, inputs: dict, now: float) -> ExecutionRecord:
        self._counter += 1
        exec_id = f"{self.world}:{self._counter}"
        rec = ExecutionRecord(exec_id, capability, executor, implementation, task_id, interface,
                              last_heartbeat=now, inputs=copy.deepcopy(inputs), inputs_seq=1)
        self.records[exec_id] = rec
        self.send("EXEC_REQUEST", executor, {
            "exec_id": exec_id,
            "capability": capability,
            "implementation": implementation,
            "task_id": task_id,
            "interface": interface,
            "context": context,
            "inputs": inputs,
            "inputs_seq": 1,
            "time": now,
        })
        return rec

    def push_inputs(self, rec: ExecutionRecord, values: dict, now: float) -> int:
        if rec.phase in ("accepted", "running") and values != rec.inputs:
            rec.inputs = copy.deepcopy(values)
            rec.inputs_seq += 1
            self.send("EXEC_TICK_SYNC", rec.executor, {
                "exec_id": rec.exec_id, "values": values, "seq": rec.inputs_seq, "time": now,
            })
        return rec.inputs_seq

    def abort(self, rec: ExecutionRecord, reason: str, now: float) -> None:
        if rec.phase in LIVE_PHASES:
            self.send("EXEC_ABORT", rec.executor, {"exec_id": rec.exec_id, "reason": reason, "time": now})
            rec.phase = "aborted"
            rec.reason = reason
        self.records.pop(rec.exec_id, None)

    def on_message(self, kind: str, sender: str, body: dict, send_time: float) -> None:
        rec = self.records.get(body.get("exec_id", ""))
        if rec is None or rec.executor != sender:
            return
        if rec.phase not in LIVE_PHASES:
            return
        rec.last_heartbeat = max(rec.last_heartbeat, send_time)
        if kind == "EXEC_ACCEPT":
            rec.phase = "accepted"
        elif kind == "EXEC_REJECT":
            rec.phase = "rejected"
            rec.reason = body.get("reason", "")
        elif kind in ("EXEC_TICK_SYNC", "EXEC_DONE"):
            if body["seq"] > rec.outputs_seq:
                rec.outputs = body["outputs"]
                rec.outputs_seq = body["seq"]
            rec.root_state = S(body["root_state"])
            rec.phase = "done" if kind == "EXEC_DONE" else "running"
        elif kind == "EXEC_ABORT":
            rec.phase = "lost"
            rec.reason = body.get("reason", "")

    def monitor(self, now: float) -> list[ExecutionRecord]:
        lost = []
        for rec in self.records.values():
            if rec.phase in LIVE_PHASES and is_lost(rec.last_heartbeat, now, self.heartbeat_timeout):
                rec.phase = "lost"
                rec.reason = "heartbeat timeout"
                lost.append(rec)
        return lost

    def settle(self, rec: ExecutionRecord) -> None:
        """Drop a finished record once its capability has consumed it."""
        if rec.phase not in LIVE_PHASES:
            self.records.pop(rec.exec_id, None)

    # -- executor side ---------------------------------------------------------

    def queue_request(self, sender: str, body: dict) -> None:
        self.pending.append(dict(body, requester=sender))

    def take_batch(self) -> list[dict]:
        """This tick's requests, cheapest first."""
        batch = sorted(self.pending, key=lambda r: (r["context"].get("cost", 0.0), r["requester"], r["exec_id"]))
        self.pending = []
        return batch

    def stale(self, request: dict) -> bool:
        """A bid placed before news of the slot's last commitment change could reach
        the auctioneer is out of date."""
        opened = request["context"].get("round_open", float("inf"))
        return opened < self.last_change + self.latency - _EPS

    def accept(self, request: dict, now: float) -> None:
        self.hosted = HostedExecution(
            exec_id=request["exec_id"],
            requester=request["requester"],
            capability=request["capability"],
            implementation=request["implementation"],
            task_id=request["task_id"],
            interface=request["interface"],
            waypoints=[list(w) for w in request["context"].get("waypoints", [])],
            started=now,
            last_heartbeat=now,
        )
        self.last_change = now
        self.send("EXEC_ACCEPT", request["requester"], {"exec_id": request["exec_id"], "time": now})

    def reject(self, request: dict, reason: str, now: float) -> None:
        self.send("EXEC_REJECT", request["requester"], {"exec_id": request["exec_id"], "reason": reason, "time": now})

    def report(self, request: dict, outputs: dict, root_state: NodeState, done: bool, now: float) -> None:
        h = self.hosted
        if h is None or h.exec_id != request["exec_id"]:
            return
        if done or outputs != h.last_outputs:
            h.outputs_seq += 1
            h.last_outputs = copy.deepcopy(outputs)
            self.send("EXEC_DONE" if done else "EXEC_TICK_SYNC", h.requester, {
                "exec_id": h.exec_id,
                "outputs": outputs,
                "seq": h.outputs_seq,
                "root_state": root_state.value,
                "time": now,
            })
        if done:
            self.release(now)

    def released(self, request: dict, reason: str, now: float) -> None:
        """The slot dropped an execution on its own (error, reset, shutdown)."""
        h = self.hosted
        if h is not None and h.exec_id == request["exec_id"]:
            self.send("EXEC_ABORT", h.requester, {"exec_id": h.exec_id, "reason": reason, "time": now})
            self.release(now)

    def release(self, now: float) -> None:
        self.hosted = None
        self.last_change = now

    def on_requester_message(self, kind: str, sender: str, body: dict, send_time: float) -> bool:
        """Heartbeat bookkeeping for the hosted execution; True if it concerns it."""
        h = self.hosted
        if h is None or h.requester != sender or body.get("exec_id") != h.exec_id:
            return False
        h.last_heartbeat = max(h.last_heartbeat, send_time)
        return True

    def orphaned(self, now: float) -> bool:
        h = self.hosted
        return h is not None and is_lost(h.last_heartbeat, now, self.heartbeat_timeout)

    # -- heartbeats ------------------------------------------------------------

    def heartbeats(self, now: float, progress: str = "") -> None:
        if now + _EPS < self._next_hb:
            return
        self._next_hb = now + self.heartbeat_interval
        for rec in self.records.values():
            if rec.phase in ("accepted", "running"):
                self.send("HEARTBEAT", rec.executor, {"exec_id": rec.exec_id, "role": "requester", "time": now})
        if self.hosted is not None:
            self.send("HEARTBEAT", self.hosted.requester, {
                "exec_id": self.hosted.exec_id, "role": "executor", "progress": progress, "time": now,
            })
