"""Node states, actions and the pinned transition tables.

Three tables are kept as plain data so tests can enumerate them:

* ``PLAIN`` for control-flow nodes and ordinary leaves,
* ``CAPABILITY`` for capability nodes,
* ``SLOT`` for remote capability slots.

Each entry maps ``(state, action)`` to the set of states the node may end in.
A single-element set is a deterministic edge; ticks that depend on leaf logic,
auction outcome or implementation progress list every admissible result.
"""

from __future__ import annotations

from enum import Enum


class NodeState(str, Enum):
    UNINITIALIZED = "uninitialized"
    IDLE = "idle"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    SHUTDOWN = "shutdown"
    ERROR = "error"
    UNASSIGNED = "unassigned"
    ASSIGNED = "assigned"
    PAUSED = "paused"


class NodeAction(str, Enum):
    SETUP = "setup"
    TICK = "tick"
    UNTICK = "untick"
    RESET = "reset"
    SHUTDOWN = "shutdown"


S = NodeState
A = NodeAction

TERMINAL = frozenset({S.SUCCEEDED, S.FAILED})
# what a control-flow parent sees when a child reports one of these
RUNNING_LIKE = frozenset({S.RUNNING, S.UNASSIGNED, S.ASSIGNED})
# assign_c is empty exactly in these states (uninitialized: before any setup)
UNBOUND_STATES = frozenset({S.UNINITIALIZED, S.IDLE, S.SHUTDOWN, S.ERROR, S.UNASSIGNED})
BOUND_STATES = frozenset({S.ASSIGNED, S.RUNNING, S.SUCCEEDED, S.FAILED, S.PAUSED})

_LOGIC = frozenset({S.RUNNING, S.SUCCEEDED, S.FAILED})


def _row(setup, tick, untick, reset, shutdown=S.SHUTDOWN):
    def norm(v):
        return frozenset(v) if isinstance(v, (set, frozenset)) else frozenset({v})

    return {
        A.SETUP: norm(setup),
        A.TICK: norm(tick),
        A.UNTICK: norm(untick),
        A.RESET: norm(reset),
        A.SHUTDOWN: norm(shutdown),
    }


def _table(rows):
    out = {}
    for state, row in rows.items():
        for action, targets in row.items():
            out[(state, action)] = targets
    return out


PLAIN = _table({
    S.UNINITIALIZED: _row(S.IDLE, S.ERROR, S.UNINITIALIZED, S.UNINITIALIZED),
    S.IDLE: _row(S.IDLE, _LOGIC, S.IDLE, S.IDLE),
    S.RUNNING: _row(S.ERROR, _LOGIC, S.IDLE, S.IDLE),
    S.SUCCEEDED: _row(S.ERROR, _LOGIC, S.IDLE, S.IDLE),
    S.FAILED: _row(S.ERROR, _LOGIC, S.IDLE, S.IDLE),
    S.PAUSED: _row(S.ERROR, _LOGIC, S.PAUSED, S.IDLE),
    S.SHUTDOWN: _row(S.IDLE, S.ERROR, S.SHUTDOWN, S.SHUTDOWN),
    S.ERROR: _row(S.ERROR, S.ERROR, S.ERROR, S.IDLE),
    # unreachable for plain nodes; present for totality
    S.UNASSIGNED: _row(S.ERROR, S.ERROR, S.ERROR, S.IDLE),
    S.ASSIGNED: _row(S.ERROR, S.ERROR, S.ERROR, S.IDLE),
})

CAPABILITY = _table({
    S.UNINITIALIZED: _row(S.IDLE, S.ERROR, S.UNINITIALIZED, S.UNINITIALIZED),
    S.IDLE: _row(S.IDLE, S.UNASSIGNED, S.IDLE, S.IDLE),
    # error once retry_limit auction rounds closed without a usable bid
    S.UNASSIGNED: _row(S.ERROR, {S.UNASSIGNED, S.ASSIGNED, S.ERROR}, S.UNASSIGNED, S.IDLE),
    S.ASSIGNED: _row(S.ERROR, {S.ASSIGNED, S.RUNNING, S.UNASSIGNED, S.FAILED}, S.ASSIGNED, S.IDLE),
    # running -> unassigned only through the loss path (failed + reset + tick)
    S.RUNNING: _row(S.ERROR, {S.RUNNING, S.SUCCEEDED, S.FAILED, S.UNASSIGNED}, S.RUNNING, S.IDLE),
    S.SUCCEEDED: _row(S.ERROR, S.SUCCEEDED, S.SUCCEEDED, S.IDLE),
    S.FAILED: _row(S.ERROR, S.FAILED, S.FAILED, S.IDLE),
    S.PAUSED: _row(S.ERROR, S.PAUSED, S.PAUSED, S.IDLE),
    S.SHUTDOWN: _row(S.IDLE, S.ERROR, S.SHUTDOWN, S.SHUTDOWN),
    S.ERROR: _row(S.ERROR, S.ERROR, S.ERROR, S.IDLE),
})

SLOT = _table({
    S.UNINITIALIZED: _row(S.IDLE, S.ERROR, S.UNINITIALIZED, S.UNINITIALIZED),
    S.IDLE: _row(S.IDLE, S.UNASSIGNED, S.IDLE, S.IDLE),
    # a plain tick never assigns a slot; only an execution request does
    S.UNASSIGNED: _row(S.ERROR, S.UNASSIGNED, S.UNASSIGNED, S.IDLE),
    S.ASSIGNED: _row(S.ERROR, {S.RUNNING, S.UNASSIGNED}, S.UNASSIGNED, S.IDLE),
    S.RUNNING: _row(S.ERROR, {S.RUNNING, S.UNASSIGNED}, S.UNASSIGNED, S.IDLE),
    S.SUCCEEDED: _row(S.ERROR, S.UNASSIGNED, S.UNASSIGNED, S.IDLE),
    S.FAILED: _row(S.ERROR, S.UNASSIGNED, S.UNASSIGNED, S.IDLE),
    S.PAUSED: _row(S.ERROR, S.UNASSIGNED, S.UNASSIGNED, S.IDLE),
    S.SHUTDOWN: _row(S.IDLE, S.ERROR, S.SHUTDOWN, S.SHUTDOWN),
    S.ERROR: _row(S.ERROR, S.ERROR, S.ERROR, S.IDLE),
})

TABLES = {"plain": PLAIN, "capability": CAPABILITY, "slot": SLOT}


def single(table, state, action):
    """Return the successor for a deterministic edge, or None if the edge branches."""
    targets = table[(state, action)]
    if len(targets) == 1:
        return next(iter(targets))
    return None


def parent_view(state: NodeState) -> NodeState:
    """How a control-flow node reads a child's state."""
    return S.RUNNING if state in RUNNING_LIKE else state
