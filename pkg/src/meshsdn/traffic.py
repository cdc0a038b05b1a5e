"""Probe and bulk traffic: periodic pings plus a fluid bulk-flow model.

Ping probes are real simulated packets and measure end-to-end liveness.
Bulk flows are fluid: every 100 ms each active flow's forwarding path is
walked through the actual flow tables, and path-sharing flows split link
capacity max-min fairly.  A walk that dead-ends at a ruleless switch behaves
exactly like a real first packet there: it is buffered and raises a
packet-in, so sampling is also what drives reactive rule installation.
After any interruption a flow ramps back linearly over its loss-recovery
delay, a stand-in for transport-layer recovery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Callable

from . import control_plane as cp
from .engine import SimTime, Simulator, to_us
from .switch import DeliverLocal, DropAction, ForwardTo, FlowSwitch, Packet
from .topology import Link, Topology


@dataclass
class PingProbeCfg:
    probe_id: str
    src_host: str
    dst: IPv4Address
    interval_s: float = 1.0
    start_s: float = 0.0


class PingManager:
    """Schedules probe requests and logs one PingResult per completed trip."""

    def __init__(
        self,
        sim: Simulator,
        originate: Callable[[str, IPv4Address, object], None],
        log: Callable[[str, dict], None],
    ) -> None:
        self.sim = sim
        self._originate = originate
        self._log = log
        self._probes: dict[str, PingProbeCfg] = {}
        self._next_seq: dict[str, int] = {}

    def add_probe(self, cfg: PingProbeCfg) -> None:
        self._probes[cfg.probe_id] = cfg
        self._next_seq[cfg.probe_id] = 0
        delay = max(0, to_us(cfg.start_s) - self.sim.now())
        self.sim.schedule(
            delay, lambda: self._send(cfg.probe_id), target=cfg.src_host, kind="ping"
        )

    def _send(self, probe_id: str) -> None:
        cfg = self._probes[probe_id]
        seq = self._next_seq[probe_id]
        self._next_seq[probe_id] = seq + 1
        self._originate(
            cfg.src_host, cfg.dst, cp.PingRequest(probe_id, seq, self.sim.now())
        )
        self.sim.schedule(
            to_us(cfg.interval_s),
            lambda: self._send(probe_id),
            target=cfg.src_host,
            kind="ping",
        )

    def on_reply(self, reply: cp.PingReply) -> None:
        self._log(
            "PingResult",
            {
                "probe": reply.probe_id,
                "seq": reply.seq,
                "rtt_us": self.sim.now() - reply.sent_at,
            },
        )


# -- max-min fair allocation -------------------------------------------------


def max_min_allocate(
    demands: dict[str, float],
    flow_links: dict[str, list[Link]],
) -> dict[str, float]:
    """Progressive-filling max-min allocation.

    ``demands`` may contain ``math.inf`` for greedy flows.  Every flow must
    cross at least one link.  Freezing happens either at a flow's demand or
    at the fair share of the first saturating link, whichever binds first.
    """
    rates: dict[str, float] = {}
    active = sorted(demands)
    link_flows: dict[str, list[str]] = {}
    link_caps: dict[str, float] = {}
    for flow in active:
        if not flow_links[flow]:
            raise ValueError(f"flow {flow} crosses no links")
        for link in flow_links[flow]:
            link_flows.setdefault(link.id, []).append(flow)
            link_caps[link.id] = float(link.capacity_bps)

    while active:
        shares: dict[str, float] = {}
        for lid in sorted(link_flows):
            unfrozen = [f for f in link_flows[lid] if f in active]
            if not unfrozen:
                continue
            residual = link_caps[lid] - sum(
                rates[f] for f in link_flows[lid] if f not in active
            )
            shares[lid] = max(residual, 0.0) / len(unfrozen)
        bottleneck = min(shares.values())
        limited = [f for f in active if demands[f] <= bottleneck]
        if limited:
            for flow in limited:
                rates[flow] = demands[flow]
                active.remove(flow)
            continue
        saturated = {lid for lid, s in shares.items() if s == bottleneck}
        for flow in list(active):
            if any(link.id in saturated for link in flow_links[flow]):
                rates[flow] = bottleneck
                active.remove(flow)
    return rates


# -- fluid bulk flows --------------------------------------------------------


@dataclass
class BulkFlowCfg:
    flow_id: str
    src_host: str
    dst: IPv4Address
    demand_bps: float | None = None  # None: take whatever the path gives
    start_s: float = 0.0
    stop_s: float | None = None
    loss_recovery_s: float = 1.0


@dataclass
class _FlowState:
    cfg: BulkFlowCfg
    active: bool = False
    path_ok_since: SimTime | None = None


class FluidTraffic:
    """Samples every active flow on a fixed grid and logs ThroughputSample."""

    SAMPLE_INTERVAL_S = 0.1

    def __init__(
        self,
        sim: Simulator,
        topo: Topology,
        attachment_of: Callable[[str], tuple[str, Link]],
        switch_of: Callable[[str], FlowSwitch],
        host_address: Callable[[str], IPv4Address],
        log: Callable[[str, dict], None],
    ) -> None:
        self.sim = sim
        self.topo = topo
        self._attachment_of = attachment_of
        self._switch_of = switch_of
        self._host_address = host_address
        self._log = log
        self._flows: dict[str, _FlowState] = {}
        self._ticking = False

    def add_flow(self, cfg: BulkFlowCfg) -> None:
        self._flows[cfg.flow_id] = _FlowState(cfg)
        delay = max(0, to_us(cfg.start_s) - self.sim.now())
        self.sim.schedule(
            delay, lambda: self.start_flow(cfg.flow_id), target=cfg.src_host, kind="flow"
        )
        if cfg.stop_s is not None:
            self.sim.schedule(
                max(0, to_us(cfg.stop_s) - self.sim.now()),
                lambda: self.stop_flow(cfg.flow_id),
                target=cfg.src_host,
                kind="flow",
            )

    def start_flow(self, flow_id: str) -> None:
        self._flows[flow_id].active = True
        if not self._ticking:
            self._ticking = True
            self._tick()

    def stop_flow(self, flow_id: str) -> None:
        state = self._flows[flow_id]
        state.active = False
        state.path_ok_since = None

    def _tick(self) -> None:
        now = self.sim.now()
        paths: dict[str, list[Link]] = {}
        for flow_id in sorted(self._flows):
            state = self._flows[flow_id]
            if not state.active:
                continue
            links = self._trace(state)
            if links is None:
                state.path_ok_since = None
                self._log("ThroughputSample", {"flow": flow_id, "bps": 0.0})
            else:
                if state.path_ok_since is None:
                    state.path_ok_since = now
                paths[flow_id] = links
        if paths:
            demands = {
                f: (
                    self._flows[f].cfg.demand_bps
                    if self._flows[f].cfg.demand_bps is not None
                    else math.inf
                )
                for f in paths
            }
            shares = max_min_allocate(demands, paths)
            for flow_id in sorted(paths):
                state = self._flows[flow_id]
                assert state.path_ok_since is not None
                elapsed = now - state.path_ok_since
                recovery = to_us(state.cfg.loss_recovery_s)
                ramp = 1.0 if recovery == 0 else min(1.0, elapsed / recovery)
                self._log(
                    "ThroughputSample",
                    {"flow": flow_id, "bps": shares[flow_id] * ramp},
                )
        self.sim.schedule(
            to_us(self.SAMPLE_INTERVAL_S), self._tick, target="traffic", kind="sample"
        )

    def _trace(self, state: _FlowState) -> list[Link] | None:
        """Walk the flow through access links and flow tables; None if it
        currently cannot reach its destination."""
        cfg = state.cfg
        wmr, access = self._attachment_of(cfg.src_host)
        if not access.up:
            return None
        links = [access]
        packet = Packet(
            src=self._host_address(cfg.src_host),
            dst=cfg.dst,
            kind="data",
            flow_id=cfg.flow_id,
        )
        current = wmr
        now = self.sim.now()
        for _ in range(len(self.topo.nodes) + 1):
            flow_switch = self._switch_of(current)
            rule = flow_switch.table.match(packet, now)
            if rule is None:
                # Behave like the first real packet of the burst: let the
                # switch buffer it and raise a packet-in if it can.
                flow_switch.forward(
                    Packet(packet.src, packet.dst, "data", flow_id=cfg.flow_id)
                )
                return None
            if isinstance(rule.action, DropAction):
                return None
            if isinstance(rule.action, DeliverLocal):
                owner = self.topo.owner_of(cfg.dst)
                if owner is None:
                    return None
                if owner.id == current:
                    return links
                try:
                    last = self.topo.link_between(current, owner.id)
                except KeyError:
                    return None
                if not last.up:
                    return None
                links.append(last)
                return links
            assert isinstance(rule.action, ForwardTo)
            try:
                hop = self.topo.link_between(current, rule.action.next_hop)
            except KeyError:
                return None
            if not hop.up:
                return None
            links.append(hop)
            current = rule.action.next_hop
        return None  # rule loop
