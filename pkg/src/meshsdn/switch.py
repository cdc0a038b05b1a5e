"""Hybrid per-hop forwarding: routed control traffic plus an OpenFlow-style table.

Every packet is classified by destination.  Anything addressed into the
control subnet is Basic class and follows the link-state routing table;
everything else is SDN class and must match a flow rule.  An SDN miss with a
live controller connection buffers the packet briefly and raises a packet-in.
Misses without a controller fall to whatever rules the local emergency policy
installed.
"""
from __future__ import annotations

from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network
from typing import Callable, Literal

from .engine import SimTime, Simulator, to_us
from .olsr import RouteEntry

ORIGIN_EFTM = "eftm"


def origin_controller(addr: IPv4Address) -> str:
    return f"controller:{addr}"


@dataclass(frozen=True)
class ForwardTo:
    next_hop: str


@dataclass(frozen=True)
class DeliverLocal:
    pass


@dataclass(frozen=True)
class DropAction:
    pass


Action = ForwardTo | DeliverLocal | DropAction

PacketKind = Literal["olsr", "control", "ping", "data"]


@dataclass
class Packet:
    src: IPv4Address
    dst: IPv4Address
    kind: PacketKind
    payload: object = None
    flow_id: str = ""
    hops_left: int = 64  # guards against transient routing loops


@dataclass
class FlowRule:
    priority: int
    dst_prefix: IPv4Network
    action: Action
    origin: str
    src_prefix: IPv4Network | None = None
    idle_timeout_us: SimTime = 0  # 0 disables the timeout
    hard_timeout_us: SimTime = 0
    installed_at: SimTime = 0
    last_hit: SimTime = 0
    install_order: int = 0

    @property
    def key(self) -> tuple[int, IPv4Network, IPv4Network | None]:
        return (self.priority, self.dst_prefix, self.src_prefix)

    def matches(self, packet: Packet) -> bool:
        if packet.dst not in self.dst_prefix:
            return False
        return self.src_prefix is None or packet.src in self.src_prefix

    def expired(self, now: SimTime) -> bool:
        if self.hard_timeout_us and now - self.installed_at >= self.hard_timeout_us:
            return True
        if self.idle_timeout_us and now - self.last_hit >= self.idle_timeout_us:
            return True
        return False

    def summary(self) -> str:
        act = {
            ForwardTo: lambda a: f"fwd:{a.next_hop}",
            DeliverLocal: lambda a: "local",
            DropAction: lambda a: "drop",
        }[type(self.action)](self.action)
        src = self.src_prefix or "*"
        return f"p={self.priority} dst={self.dst_prefix} src={src} -> {act} [{self.origin}]"


class FlowTable:
    def __init__(self) -> None:
        self.rules: dict[tuple, FlowRule] = {}
        self._install_counter = 0

    def install(self, rule: FlowRule) -> FlowRule:
        self._install_counter += 1
        rule.install_order = self._install_counter
        self.rules[rule.key] = rule
        return rule

    def match(self, packet: Packet, now: SimTime, touch: bool = True) -> FlowRule | None:
        best: FlowRule | None = None
        for rule in self.rules.values():
            if rule.expired(now) or not rule.matches(packet):
                continue
            if best is None or self._rank(rule) > self._rank(best):
                best = rule
        if best is not None and touch:
            best.last_hit = now
        return best

    @staticmethod
    def _rank(rule: FlowRule) -> tuple[int, int, int, int]:
        src_len = rule.src_prefix.prefixlen if rule.src_prefix is not None else -1
        # Later install wins only as a final, never-ambiguous tie-break.
        return (rule.priority, rule.dst_prefix.prefixlen, src_len, rule.install_order)

    def remove_expired(self, now: SimTime) -> list[FlowRule]:
        gone = [r for r in self.rules.values() if r.expired(now)]
        for rule in gone:
            del self.rules[rule.key]
        return gone

    def flush(self, origin_filter: str) -> list[FlowRule]:
        if origin_filter == "*":
            gone = list(self.rules.values())
        elif origin_filter == "controller:*":
            gone = [r for r in self.rules.values() if r.origin.startswith("controller:")]
        else:
            gone = [r for r in self.rules.values() if r.origin == origin_filter]
        for rule in gone:
            del self.rules[rule.key]
        return gone

    def dump(self) -> list[str]:
        ordered = sorted(
            self.rules.values(),
            key=lambda r: (-r.priority, str(r.dst_prefix), str(r.src_prefix), r.origin),
        )
        return [r.summary() for r in ordered]


@dataclass
class SwitchConfig:
    buffer_timeout_s: float = 1.0
    sweep_interval_s: float = 1.0

    @property
    def buffer_timeout_us(self) -> SimTime:
        return to_us(self.buffer_timeout_s)


class FlowSwitch:
    """Forwarding plane of one mesh router.

    The hosting node wires in routing lookups, link transmission, local
    delivery, and the controller-connection state; the switch itself only
    decides dispositions.
    """

    def __init__(
        self,
        node_id: str,
        control_subnet: IPv4Network,
        cfg: SwitchConfig,
        sim: Simulator,
        log: Callable[[str, dict], None],
    ) -> None:
        self.node_id = node_id
        self.control_subnet = control_subnet
        self.cfg = cfg
        self.sim = sim
        self.log = log
        self.table = FlowTable()
        self._buffered: list[tuple[Packet, object]] = []  # (packet, timeout handle)

        # Wired by the hosting node after construction.
        self.route_lookup: Callable[[IPv4Address], RouteEntry | None] = lambda a: None
        self.owns_address: Callable[[IPv4Address], bool] = lambda a: False
        self.local_subnets: Callable[[], list[IPv4Network]] = lambda: []
        self.send_to_neighbor: Callable[[str, Packet], None] = lambda n, p: None
        self.deliver_local: Callable[[Packet], None] = lambda p: None
        self.controller_connected: Callable[[], bool] = lambda: False
        self.raise_packet_in: Callable[[Packet], None] = lambda p: None
        self.is_neighbor: Callable[[str], bool] = lambda n: True

    def start(self) -> None:
        self.sim.schedule(
            to_us(self.cfg.sweep_interval_s), self._sweep, target=self.node_id, kind="rule-sweep"
        )

    def classify(self, packet: Packet) -> Literal["basic", "sdn"]:
        return "basic" if packet.dst in self.control_subnet else "sdn"

    # -- forwarding ---------------------------------------------------------

    def forward(self, packet: Packet) -> None:
        if packet.hops_left <= 0:
            self._drop(packet, "hop-limit")
            return
        packet.hops_left -= 1
        if self.classify(packet) == "basic":
            self._forward_basic(packet)
        else:
            self._forward_sdn(packet)

    def _forward_basic(self, packet: Packet) -> None:
        if self.owns_address(packet.dst):
            self.deliver_local(packet)
            return
        entry = self.route_lookup(packet.dst)
        if entry is None:
            self._drop(packet, "no-route")
        elif entry.next_hop is None:
            self.deliver_local(packet)
        else:
            self.send_to_neighbor(entry.next_hop, packet)

    def _forward_sdn(self, packet: Packet) -> None:
        rule = self.table.match(packet, self.sim.now())
        if rule is not None:
            self._apply(rule.action, packet)
            return
        if self.controller_connected():
            self._buffer(packet)
            self.raise_packet_in(packet)
        else:
            # Either emergency rules already decided everything that is
            # allowed, or no controller has ever been reached; both drop.
            self._drop(packet, "no-rule")

    def _apply(self, action: Action, packet: Packet) -> None:
        if isinstance(action, ForwardTo):
            self.send_to_neighbor(action.next_hop, packet)
        elif isinstance(action, DeliverLocal):
            if self.owns_address(packet.dst) or any(
                packet.dst in net for net in self.local_subnets()
            ):
                self.deliver_local(packet)
            else:
                self._drop(packet, "bad-local")
        else:
            self._drop(packet, "rule-drop")

    # -- packet buffer ------------------------------------------------------

    def _buffer(self, packet: Packet) -> None:
        handle = self.sim.schedule(
            self.cfg.buffer_timeout_us,
            lambda p=packet: self._buffer_expire(p),
            target=self.node_id,
            kind="buffer-timeout",
        )
        self._buffered.append((packet, handle))

    def _buffer_expire(self, packet: Packet) -> None:
        for i, (buffered, _) in enumerate(self._buffered):
            if buffered is packet:
                del self._buffered[i]
                self._drop(packet, "buffer-timeout")
                return

    def _release_buffered(self, rule: FlowRule) -> None:
        released = [(p, h) for p, h in self._buffered if rule.matches(p)]
        self._buffered = [(p, h) for p, h in self._buffered if not rule.matches(p)]
        for packet, handle in released:
            handle.cancel()
            packet.hops_left += 1  # retry does not burn a hop
            self.forward(packet)

    # -- table mutation -----------------------------------------------------

    def install_rule(self, rule: FlowRule) -> None:
        if isinstance(rule.action, ForwardTo) and not self.is_neighbor(rule.action.next_hop):
            raise ValueError(
                f"{self.node_id}: rule targets non-neighbor {rule.action.next_hop}"
            )
        now = self.sim.now()
        rule.installed_at = now
        rule.last_hit = now
        self.table.install(rule)
        self._log_table("install", extra={"rule": rule.summary()})
        self._release_buffered(rule)

    def flush_rules(self, origin_filter: str) -> int:
        gone = self.table.flush(origin_filter)
        if gone:
            self._log_table("flush", extra={"filter": origin_filter, "removed": len(gone)})
        return len(gone)

    def _sweep(self) -> None:
        gone = self.table.remove_expired(self.sim.now())
        if gone:
            self._log_table("expire", extra={"removed": [r.summary() for r in gone]})
        self.sim.schedule(
            to_us(self.cfg.sweep_interval_s), self._sweep, target=self.node_id, kind="rule-sweep"
        )

    # -- logging ------------------------------------------------------------

    def _log_table(self, event: str, extra: dict) -> None:
        data = {"node": self.node_id, "event": event}
        data.update(extra)
        data["table"] = self.table.dump()
        self.log("RuleEvent", data)

    def _drop(self, packet: Packet, reason: str) -> None:
        self.log(
            "PacketDrop",
            {
                "node": self.node_id,
                "reason": reason,
                "dst": str(packet.dst),
                "kind": packet.kind,
            },
        )


@dataclass(frozen=True)
class RuleSpec:
    """Wire-format description of a rule, as carried by flow-mod messages."""

    priority: int
    dst_prefix: IPv4Network
    action: Action
    origin: str
    src_prefix: IPv4Network | None = None
    idle_timeout_us: SimTime = 0
    hard_timeout_us: SimTime = 0

    def build(self) -> FlowRule:
        return FlowRule(
            priority=self.priority,
            dst_prefix=self.dst_prefix,
            action=self.action,
            origin=self.origin,
            src_prefix=self.src_prefix,
            idle_timeout_us=self.idle_timeout_us,
            hard_timeout_us=self.hard_timeout_us,
        )
