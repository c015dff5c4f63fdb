"""Per-robot capability repository with digest-based anti-entropy.

Interfaces are replicated team-wide. Implementation bodies stay with their
owner; only their existence (id, interface, preconditions) is advertised.
Every sync round each robot broadcasts a DIGEST; a receiver that lacks an
advertised interface pulls it from the sender.
"""

from __future__ import annotations

import hashlib
import logging

from .bus import dumps
from .capability import (
    CapabilityImplementation,
    CapabilityInterface,
    Precondition,
    executable,
    validate_preconditions,
)

log = logging.getLogger(__name__)

REPO_KINDS = ("INTERFACE_ANNOUNCE", "DIGEST", "PULL_REQUEST", "PULL_REPLY", "IMPL_ADVERT")


class RepositoryError(Exception):
    pass


def interface_hash(ci: CapabilityInterface) -> str:
    return hashlib.sha1(dumps(ci.to_dict()).encode()).hexdigest()[:16]


class Repository:
    def __init__(self, owner: str, has_slot: bool = True, incarnation: int = 0):
        self.owner = owner
        self.has_slot = has_slot
        self.interfaces: dict[str, CapabilityInterface] = {}
        self.origin: dict[str, str] = {}
        self.local: dict[str, list[CapabilityImplementation]] = {}
        self.completed: set[str] = set()
        self.version = (incarnation, 0)
        self.seen: dict[str, tuple[int, int]] = {}
        # origin -> {"impls": [(iface, id, preconditions)], "has_slot", "completed", "available"}
        self.adverts: dict[str, dict] = {}
        self.tombstones: set[str] = set()
        self.warnings: list[str] = []
        self.outbox: list[tuple[str, str | None, dict]] = []

    def _bump(self):
        self.version = (self.version[0], self.version[1] + 1)

    # -- interfaces ------------------------------------------------------------

    def register_interface(self, ci: CapabilityInterface, origin: str | None = None) -> bool:
        existing = self.interfaces.get(ci.name)
        if existing is not None:
            if existing.signature() != ci.signature():
                msg = f"interface {ci.name!r} from {origin or self.owner} conflicts with known signature"
                self.warnings.append(msg)
                raise RepositoryError(msg)
            return False
        self.interfaces[ci.name] = ci
        self.origin[ci.name] = origin or self.owner
        self.tombstones.discard(ci.name)
        self._bump()
        if origin is None:
            self.outbox.append(("INTERFACE_ANNOUNCE", None, {"origin": self.owner, "interface": ci.to_dict()}))
        return True

    def remove_interface(self, name: str) -> None:
        if self.local.get(name):
            raise RepositoryError(f"interface {name!r} still has local implementations")
        if self.interfaces.pop(name, None) is None:
            raise RepositoryError(f"unknown interface {name!r}")
        self.origin.pop(name, None)
        self.tombstones.add(name)
        self._bump()
        self.outbox.append(("INTERFACE_ANNOUNCE", None, {"origin": self.owner, "removed": name}))

    # -- implementations -------------------------------------------------------

    def register_implementation(self, impl: CapabilityImplementation) -> None:
        if impl.interface not in self.interfaces:
            raise RepositoryError(f"implementation {impl.id!r}: unknown interface {impl.interface!r}")
        if impl.owner_world != self.owner:
            raise RepositoryError(f"implementation {impl.id!r} belongs to {impl.owner_world!r}")
        if self.find(impl.id) is not None:
            raise RepositoryError(f"duplicate implementation id {impl.id!r}")
        impls = self.local.setdefault(impl.interface, [])
        impls.append(impl)
        impls.sort(key=lambda i: i.id)
        self._bump()
        self.outbox.append(("IMPL_ADVERT", None, {"origin": self.owner, "impls": self._impl_adverts()}))

    def remove_implementation(self, impl_id: str) -> None:
        for name, impls in self.local.items():
            for i in impls:
                if i.id == impl_id:
                    impls.remove(i)
                    self._bump()
                    self.outbox.append(("IMPL_ADVERT", None, {"origin": self.owner, "impls": self._impl_adverts()}))
                    return
        raise RepositoryError(f"unknown implementation {impl_id!r}")

    def implementations(self, interface: str) -> list[CapabilityImplementation]:
        return list(self.local.get(interface, []))

    def find(self, impl_id: str) -> CapabilityImplementation | None:
        for impls in self.local.values():
            for i in impls:
                if i.id == impl_id:
                    return i
        return None

    def _impl_adverts(self):
        return [
            [i.interface, i.id, [[p.interface, p.scope] for p in i.preconditions]]
            for name in sorted(self.local)
            for i in self.local[name]
        ]

    # -- synchronization -------------------------------------------------------

    def digest(self) -> dict:
        return {
            "origin": self.owner,
            "version": list(self.version),
            "interfaces": {n: interface_hash(ci) for n, ci in sorted(self.interfaces.items())},
            "impls": self._impl_adverts(),
            "completed": sorted(self.completed),
            "has_slot": self.has_slot,
        }

    def _accept_remote(self, d: dict, origin: str) -> None:
        ci = CapabilityInterface.from_dict(d)
        if ci.name in self.tombstones:
            return
        try:
            self.register_interface(ci, origin=origin)
        except RepositoryError:
            log.warning("%s: %s", self.owner, self.warnings[-1])

    def sync_step(self, incoming) -> list[tuple[str, str | None, dict]]:
        """Consume repository messages ``(kind, sender, body)``; return messages to send.

        A ``None`` recipient means broadcast.
        """
        for kind, sender, body in incoming:
            if kind == "DIGEST":
                origin = body["origin"]
                ver = tuple(body["version"])
                entry = self.adverts.setdefault(origin, {})
                entry.update(
                    impls=[(a, b, tuple(Precondition(*p) for p in c)) for a, b, c in body["impls"]],
                    has_slot=bool(body["has_slot"]),
                    completed=set(body["completed"]),
                    available=True,
                )
                # push what the sender lacks, pull what we lack
                extra = [n for n in sorted(self.interfaces) if n not in body["interfaces"]]
                if extra:
                    self.outbox.append(("PULL_REPLY", sender, {
                        "origin": self.owner, "interfaces": [self.interfaces[n].to_dict() for n in extra],
                    }))
                if ver <= self.seen.get(origin, (-1, -1)):
                    continue  # stale
                self.seen[origin] = ver
                missing = []
                for name, h in body["interfaces"].items():
                    mine = self.interfaces.get(name)
                    if mine is None:
                        if name not in self.tombstones:
                            missing.append(name)
                    elif interface_hash(mine) != h:
                        self.warnings.append(f"interface {name!r} differs between {self.owner} and {origin}")
                if missing:
                    self.outbox.append(("PULL_REQUEST", sender, {"names": missing}))
            elif kind == "PULL_REQUEST":
                defs = [self.interfaces[n].to_dict() for n in body["names"] if n in self.interfaces]
                if defs:
                    self.outbox.append(("PULL_REPLY", sender, {"origin": self.owner, "interfaces": defs}))
            elif kind == "PULL_REPLY":
                for d in body["interfaces"]:
                    self._accept_remote(d, body["origin"])
            elif kind == "INTERFACE_ANNOUNCE":
                if "removed" in body:
                    name = body["removed"]
                    if self.origin.get(name) == body["origin"] and not self.local.get(name):
                        self.interfaces.pop(name, None)
                        self.origin.pop(name, None)
                        self.tombstones.add(name)
                else:
                    self._accept_remote(body["interface"], body["origin"])
            elif kind == "IMPL_ADVERT":
                entry = self.adverts.setdefault(body["origin"], {"has_slot": True, "completed": set()})
                entry["impls"] = [(a, b, tuple(Precondition(*p) for p in c)) for a, b, c in body["impls"]]
                entry["available"] = True
        out, self.outbox = self.outbox, []
        return out

    def mark_completed(self, interface: str) -> None:
        if interface not in self.completed:
            self.completed.add(interface)
            self._bump()

    def mark_departed(self, world: str) -> None:
        if world in self.adverts:
            self.adverts[world]["available"] = False

    def completed_by(self, live) -> dict[str, set[str]]:
        """Completed-interface sets of the given live teammates (self excluded)."""
        return {
            w: set(self.adverts[w].get("completed", ()))
            for w in live
            if w != self.owner and w in self.adverts and self.adverts[w].get("available", True)
        }

    def query_executable(self, interface: str, team_view: dict[str, bool], capability_world: str,
                         completed: dict[str, set[str]] | None = None):
        """Implementations of ``interface`` executable for a capability on
        ``capability_world``, as ``(robot, implementation id, feasible)``.

        ``feasible`` is the precondition check for that robot; ``completed``
        maps each live robot to its completed-interface set.
        """
        ci = self.interfaces.get(interface)
        if ci is None:
            return []
        if completed is None:
            completed = dict(self.completed_by(team_view))
            completed[self.owner] = set(self.completed)
        entries = []
        for i in self.local.get(interface, []):
            entries.append((self.owner, i.id, i.preconditions))
        for origin in sorted(self.adverts):
            if origin == self.owner or origin not in team_view:
                continue
            adv = self.adverts[origin]
            if not adv.get("available", True):
                continue
            for name, impl_id, pres in adv.get("impls", []):
                if name == interface:
                    entries.append((origin, impl_id, pres))
        out = []
        for robot, impl_id, pres in entries:
            probe = CapabilityImplementation(impl_id, interface, robot, {}, pres)
            if not executable(ci, capability_world, probe, team_view):
                continue
            here = completed.get(robot, set())
            nearby = {w: s for w, s in completed.items() if w != robot and w in team_view}
            out.append((robot, impl_id, validate_preconditions(probe, here, nearby)))
        return sorted(out)
