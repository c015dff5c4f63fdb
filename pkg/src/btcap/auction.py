"""Open single-item auctions: rounds, bids, award selection and re-auction rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cost import UtilityCost

ROUND_STATUS = ("pending", "open", "awarded", "void")
_EPS = 1e-9


class AuctionError(Exception):
    pass


@dataclass(frozen=True)
class Bid:
    auction: str
    bidder: str
    implementation: str
    cost: UtilityCost
    timestamp: float

    def __post_init__(self):
        if not self.cost.feasible:
            raise AuctionError(f"bid from {self.bidder!r} is not feasible")

    def key(self):
        return (self.cost.cost, self.bidder, self.implementation)

    def to_dict(self):
        return {
            "auction": self.auction,
            "bidder": self.bidder,
            "implementation": self.implementation,
            "cost": self.cost.cost,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["auction"], d["bidder"], d["implementation"], UtilityCost(float(d["cost"])), float(d["timestamp"]))


def select_winner(bids) -> Bid | None:
    """Lowest cost; ties go to the smallest robot id, then the smallest implementation id."""
    bids = list(bids)
    if not bids:
        return None
    return min(bids, key=Bid.key)


@dataclass
class AuctionRound:
    id: str
    interface: str
    context: dict
    auctioneer: str
    window: tuple[float, float] | None = None  # None while waiting for a round boundary
    status: str = "pending"
    award: Bid | None = None
    bids: dict[str, Bid] = field(default_factory=dict)
    urgent: bool = False
    capability: str | None = None  # capability node id on the auctioneer
    probe: bool = False  # re-auction of a running assignment
    final_bids: dict[str, Bid] = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in ROUND_STATUS:
            raise AuctionError(f"bad round status {self.status!r}")

    def start(self, now: float, bid_window: float) -> None:
        if bid_window <= 0:
            raise AuctionError("bid window must be positive")
        self.window = (now, now + bid_window)
        self.status = "open"

    @property
    def open_time(self):
        return self.window[0] if self.window else math.inf

    def submit(self, bid: Bid, now: float) -> bool:
        """Record a bid; a bidder's latest bid replaces earlier ones."""
        if self.status != "open" or bid.auction != self.id or now > self.window[1] + _EPS:
            return False
        self.bids[bid.bidder] = bid
        return True

    def due(self, now: float) -> bool:
        return self.status == "open" and now >= self.window[1] - _EPS

    def close(self, now: float) -> Bid | None:
        if self.status != "open":
            raise AuctionError(f"round {self.id} is {self.status}")
        if now < self.window[1] - _EPS:
            raise AuctionError(f"round {self.id} closes at {self.window[1]}, now {now}")
        winner = select_winner(self.bids.values())
        self.final_bids = self.bids
        self.bids = {}  # losing bids do not carry over
        if winner is None:
            self.status = "void"
        else:
            self.status = "awarded"
            self.award = winner
        return winner


def next_boundary(now: float, period: float) -> float:
    """Earliest multiple of ``period`` at or after ``now``."""
    if period <= 0:
        return now
    k = math.ceil(now / period - _EPS)
    return k * period


def on_boundary(now: float, period: float) -> bool:
    return period <= 0 or abs(next_boundary(now, period) - now) < _EPS


def should_preempt(new_cost: float, remaining_cost: float, hysteresis: float) -> bool:
    return new_cost <= hysteresis * remaining_cost + _EPS


@dataclass
class ReauctionPolicy:
    """Decides when running assignments are put up for auction again."""

    interval: float = 10.0
    last: dict[str, float] = field(default_factory=dict)
    epoch_seen: dict[str, int] = field(default_factory=dict)

    def due(self, capabilities, epoch: int, now: float) -> list[str]:
        out = []
        for cid in sorted(capabilities):
            first = cid not in self.last
            if first:
                self.last[cid] = now
                self.epoch_seen[cid] = epoch
                continue
            if epoch != self.epoch_seen[cid] or now - self.last[cid] >= self.interval - _EPS:
                out.append(cid)
                self.last[cid] = now
                self.epoch_seen[cid] = epoch
        return out

    def forget(self, cid: str) -> None:
        self.last.pop(cid, None)
        self.epoch_seen.pop(cid, None)
