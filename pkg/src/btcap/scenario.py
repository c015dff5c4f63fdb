"""Scenario, catalog and implementation-manifest loading plus bundle validation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .capability import CapabilityError, CapabilityImplementation, CapabilityInterface, Precondition, check_bridges
from .tree import StructureError, TreeEnvironment
from .world import DEFAULT_SPEEDS, WorldError, WorldMap

log = logging.getLogger(__name__)

EVENT_KINDS = ("join", "leave", "fail", "recover")
DATA_DIR = Path(__file__).parent / "data"


class ScenarioError(Exception):
    pass


@dataclass
class Parameters:
    bid_window: float = 2.0
    reauction_interval: float = 10.0
    hysteresis_factor: float = 0.8
    heartbeat_interval: float = 1.0
    heartbeat_timeout: float = 3.0
    fail_chance: float = 0.1
    retry_limit: int = 3
    auction_period: float = 5.0
    sync_interval: float = 1.0
    tick_period: float = 0.5
    max_time: float = 3600.0

    def __post_init__(self):
        if self.tick_period <= 0 or self.bid_window <= 0:
            raise ScenarioError("tick_period and bid_window must be positive")
        if self.heartbeat_timeout <= self.heartbeat_interval:
            raise ScenarioError("heartbeat_timeout must exceed heartbeat_interval")
        if not 0 < self.hysteresis_factor <= 1:
            raise ScenarioError("hysteresis_factor must lie in (0, 1]")
        if self.retry_limit < 1:
            raise ScenarioError("retry_limit must be at least 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown parameters: {sorted(extra)}")
        return cls(**d)


@dataclass
class RobotSpec:
    id: str
    type: str
    start: tuple[float, float] | str
    distance_cost_factor: float
    implementations: list[str]
    speed: float | None = None

    def __post_init__(self):
        if self.speed is None:
            self.speed = DEFAULT_SPEEDS.get(self.type, 1.0)


@dataclass(frozen=True)
class Event:
    time: float
    world: str
    event: str

    def __post_init__(self):
        if self.event not in EVENT_KINDS:
            raise ScenarioError(f"unknown event {self.event!r}")


@dataclass
class Scenario:
    name: str
    seed: int
    map_path: Path
    catalog_path: Path
    robots: list[RobotSpec]
    events: list[Event] = field(default_factory=list)
    parameters: Parameters = field(default_factory=Parameters)
    mission_host: str = "operator"
    base_dir: Path = Path(".")

    def __post_init__(self):
        ids = [r.id for r in self.robots]
        if len(ids) != len(set(ids)):
            raise ScenarioError("robot ids must be unique")
        if self.mission_host in ids and any(e.world == self.mission_host for e in self.events):
            raise ScenarioError("the mission host cannot be scripted to leave or fail")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ScenarioError("event times must be non-decreasing")
        for e in self.events:
            if e.world not in ids:
                raise ScenarioError(f"event for unknown robot {e.world!r}")

    def initial_robots(self) -> list[str]:
        """Robots present at t=0: those whose first scripted event is not a join."""
        first = {}
        for e in self.events:
            first.setdefault(e.world, e.event)
        return [r.id for r in self.robots if first.get(r.id) != "join"]

    def robot(self, rid: str) -> RobotSpec:
        for r in self.robots:
            if r.id == rid:
                return r
        raise ScenarioError(f"unknown robot {rid!r}")

    @classmethod
    def from_dict(cls, d, base_dir=Path(".")):
        base_dir = Path(base_dir)
        try:
            robots = [
                RobotSpec(
                    id=r["id"],
                    type=r.get("type", r["id"]),
                    start=r.get("start", "start_area"),
                    distance_cost_factor=float(r["distance_cost_factor"]),
                    implementations=[str(base_dir / p) for p in r.get("implementations", [])],
                    speed=r.get("speed"),
                )
                for r in d["robots"]
            ]
            return cls(
                name=d.get("name", "scenario"),
                seed=int(d.get("seed", 0)),
                map_path=base_dir / d["map"],
                catalog_path=base_dir / d["catalog"],
                robots=robots,
                events=[Event(float(e["time"]), e["world"], e["event"]) for e in d.get("events", [])],
                parameters=Parameters.from_dict(d.get("parameters", {})),
                mission_host=d.get("mission_host", "operator"),
                base_dir=base_dir,
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing field {exc}") from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "mission_host": self.mission_host,
            "parameters": asdict(self.parameters),
            "robots": [r.id for r in self.robots],
            "events": [asdict(e) for e in self.events],
        }


# -- catalog and manifests -----------------------------------------------------

def load_catalog(path) -> list[CapabilityInterface]:
    d = json.loads(Path(path).read_text())
    out = [CapabilityInterface.from_dict(i) for i in d["interfaces"]]
    names = [c.name for c in out]
    if len(names) != len(set(names)):
        raise CapabilityError("duplicate interface names in catalog")
    return out


def load_implementations(path, owner: str) -> list[CapabilityImplementation]:
    """Read a manifest; implementation ids are prefixed with the owning robot id."""
    path = Path(path)
    d = json.loads(path.read_text())
    out = []
    for entry in d["implementations"]:
        tree = entry["tree"]
        if isinstance(tree, str):
            tree = json.loads((path.parent / tree).read_text())
        out.append(CapabilityImplementation(
            id=f"{owner}/{entry['id']}",
            interface=entry["interface"],
            owner_world=owner,
            tree=tree,
            preconditions=tuple(Precondition(c, s) for c, s in entry.get("preconditions", [])),
            expected_duration=float(entry["expected_duration"]),
            extra_params=dict(entry.get("extra_params", {})),
        ))
    return out


def mission_capabilities(tree: dict) -> list[dict]:
    return [n for n in tree.get("nodes", []) if n["kind"] == "capability"]


def check_mission(tree: dict, catalog: list[CapabilityInterface]) -> list[str]:
    """Errors for capability nodes that do not match a cataloged interface."""
    by_name = {c.name: c for c in catalog}
    errors = []
    try:
        env = TreeEnvironment.from_dict(tree)
    except (StructureError, KeyError) as exc:
        return [f"mission tree: {exc}"]
    for node in env.nodes.values():
        if node.kind != "capability":
            continue
        try:
            ci = CapabilityInterface.from_node(node)
        except (CapabilityError, KeyError) as exc:
            errors.append(f"capability {node.id!r}: {exc}")
            continue
        known = by_name.get(ci.name)
        if known is None:
            errors.append(f"capability {node.id!r}: unknown interface {ci.name!r}")
        elif known.signature() != ci.signature():
            errors.append(f"capability {node.id!r}: parameters differ from interface {ci.name!r}")
    return errors


def check_implementation(impl: CapabilityImplementation, catalog) -> list[str]:
    by_name = {c.name: c for c in catalog}
    ci = by_name.get(impl.interface)
    if ci is None:
        return [f"implementation {impl.id!r}: unknown interface {impl.interface!r}"]
    try:
        env = TreeEnvironment.from_dict(impl.tree)
        check_bridges(env, ci)
    except (CapabilityError, StructureError, KeyError) as exc:
        return [f"implementation {impl.id!r}: {exc}"]
    return []


def surjectivity_warnings(scenario: Scenario, tree: dict) -> list[str]:
    """Mission capabilities without any implementation in the initial team.

    Raises when no scripted join could ever supply one.
    """
    initial = set(scenario.initial_robots())
    offered_initial, offered_ever = set(), set()
    for r in scenario.robots:
        for path in r.implementations:
            for impl in load_implementations(path, r.id):
                offered_ever.add(impl.interface)
                if r.id in initial:
                    offered_initial.add(impl.interface)
    warnings = []
    for node in mission_capabilities(tree):
        name = node["options"]["interface"]
        if name in offered_initial:
            continue
        if name not in offered_ever:
            raise ScenarioError(f"capability {node['id']!r}: no robot implements {name!r}")
        warnings.append(f"capability {node['id']!r}: {name!r} only available after a scripted join")
    return warnings


def validate_bundle(directory) -> list[str]:
    """Check every JSON file under ``directory``; one report line per problem."""
    directory = Path(directory)
    report = []
    catalog = []
    cat_path = directory / "catalog.json"
    if cat_path.exists():
        try:
            catalog = load_catalog(cat_path)
        except (CapabilityError, StructureError, KeyError, json.JSONDecodeError) as exc:
            report.append(f"{cat_path}: {exc}")
    else:
        report.append(f"{directory}: missing catalog.json")
    for path in sorted(directory.rglob("*.json")):
        rel = path.relative_to(directory)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            report.append(f"{rel}:{exc.lineno}: {exc.msg}")
            continue
        try:
            if "implementations" in d:
                for impl in load_implementations(path, "check"):
                    report += [f"{rel}: {m}" for m in check_implementation(impl, catalog)]
            elif "robots" in d:
                sc = Scenario.from_dict(d, path.parent)
                WorldMap.load(sc.map_path)
            elif "bounds" in d:
                WorldMap.from_dict(d)
            elif "nodes" in d and any(n["kind"] == "capability" for n in d["nodes"]):
                report += [f"{rel}: {m}" for m in check_mission(d, catalog)]
            elif "nodes" in d:
                TreeEnvironment.from_dict(d)
        except (CapabilityError, StructureError, ScenarioError, WorldError, KeyError, TypeError, ValueError,
                FileNotFoundError) as exc:
            report.append(f"{rel}: {type(exc).__name__}: {exc}")
    return report
