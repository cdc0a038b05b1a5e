"""Controller master selection and survival logic embedded in each mesh router.

Every mesh router runs one :class:`MasterSelector`.  It discovers controllers
from /32 host routes announced inside a dedicated controller address range,
ranks them (lowest address = highest priority unless a static override is
configured), and keeps exactly one control connection alive:

* a periodic poll probes candidates in priority order, each attempt bounded
  by ``connect_timeout``; while connected only strictly-higher-priority
  candidates are probed, so an established master is never re-validated by
  polling (keepalives do that);
* handovers are hard: the old connection is closed before the new one is
  opened, and the flow table is left completely untouched;
* if no controller answers and none is connected, the router enters Emergency
  mode and installs its own rules according to the configured policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network
from typing import Callable, Literal

from . import control_plane as cp
from .engine import SimTime, Simulator, to_us
from .olsr import OlsrDaemon
from .switch import (
    ORIGIN_EFTM,
    DeliverLocal,
    DropAction,
    FlowRule,
    FlowSwitch,
    ForwardTo,
)

Mode = Literal["disconnected", "connecting", "connected", "emergency"]
EmergencyPolicy = Literal["control-only", "allow-all", "selective"]

EMERGENCY_FORWARD_PRIORITY = 20
EMERGENCY_DROP_PRIORITY = 10


@dataclass
class EftmConfig:
    poll_period_s: float = 3.0
    connect_timeout_s: float = 2.0
    keepalive_interval_s: float = 1.0
    controller_range: IPv4Network = IPv4Network("10.0.255.0/24")
    hysteresis_hold_s: float = 0.0
    emergency_policy: EmergencyPolicy = "control-only"
    selective_prefixes: list[IPv4Network] = field(default_factory=list)
    # Explicit priority order; discovered controllers not listed rank after
    # the listed ones, by ascending address.
    priority_override: list[IPv4Address] | None = None
    clear_controller_rules_on_emergency: bool = True
    randomize_phase: bool = True

    def __post_init__(self) -> None:
        if self.poll_period_s <= 0 or self.connect_timeout_s <= 0:
            raise ValueError("poll period and connect timeout must be positive")
        if self.keepalive_interval_s <= 0:
            raise ValueError("keepalive interval must be positive")
        if self.hysteresis_hold_s < 0:
            raise ValueError("hysteresis hold must be >= 0")

    @property
    def poll_period_us(self) -> SimTime:
        return to_us(self.poll_period_s)

    @property
    def connect_timeout_us(self) -> SimTime:
        return to_us(self.connect_timeout_s)

    @property
    def keepalive_interval_us(self) -> SimTime:
        return to_us(self.keepalive_interval_s)


@dataclass
class ControlConnection:
    wmr: str
    controller: IPv4Address
    status: Literal["opening", "established", "closed"]
    opened_at: SimTime


class MasterSelector:
    """One router's controller-selection state machine."""

    def __init__(
        self,
        node_id: str,
        cfg: EftmConfig,
        sim: Simulator,
        olsr: OlsrDaemon,
        flow_switch: FlowSwitch,
        send: Callable[[IPv4Address, object], None],
        log: Callable[[str, dict], None],
    ) -> None:
        self.node_id = node_id
        self.cfg = cfg
        self.sim = sim
        self.olsr = olsr
        self.switch = flow_switch
        self._send = send
        self._log = log
        self._rng = sim.node_rng(node_id)

        self.mode: Mode = "disconnected"
        self.conn: ControlConnection | None = None
        self._last_change: SimTime = -(1 << 62)
        self._token = 0
        self._cycle: list[IPv4Address] = []
        self._cycle_active = False
        self._probe_wait: tuple[int, object] | None = None  # (token, timeout handle)
        self._probe_target: IPv4Address | None = None
        self._pending: tuple[IPv4Address, int, object] | None = None  # connect in flight
        self._keepalive_waits: dict[int, object] = {}
        self._keepalive_timer: object | None = None
        self._emergency_rules = False

        olsr.on_routes_changed.append(self._on_routes_changed)

    @property
    def master(self) -> IPv4Address | None:
        if self.conn is not None and self.conn.status == "established":
            return self.conn.controller
        return None

    def start(self) -> None:
        phase = (
            round(self._rng.random() * self.cfg.poll_period_us)
            if self.cfg.randomize_phase
            else 0
        )
        self.sim.schedule(phase, self._periodic_poll, target=self.node_id, kind="poll")

    # -- discovery ----------------------------------------------------------

    def discover_controllers(self) -> list[IPv4Address]:
        """Reachable-looking controllers, best first.  A controller is known
        while its /32 announcement inside ``controller_range`` is live."""
        found: set[IPv4Address] = set()
        for _, prefix, _ in self.olsr.hna_entries():
            if prefix.prefixlen == 32 and prefix.network_address in self.cfg.controller_range:
                found.add(prefix.network_address)
        return sorted(found, key=self._priority_key)

    def _priority_key(self, addr: IPv4Address) -> tuple[int, int]:
        override = self.cfg.priority_override
        if override is not None and addr in override:
            return (override.index(addr), int(addr))
        rank = len(override) if override is not None else 0
        return (rank, int(addr))

    def _outranks_master(self, addr: IPv4Address) -> bool:
        assert self.master is not None
        return self._priority_key(addr) < self._priority_key(self.master)

    # -- poll cycle ---------------------------------------------------------

    def _periodic_poll(self) -> None:
        self.poll_tick()
        self.sim.schedule(
            self.cfg.poll_period_us, self._periodic_poll, target=self.node_id, kind="poll"
        )

    def poll_tick(self) -> None:
        if self._cycle_active or self.mode == "connecting":
            return
        candidates = self.discover_controllers()
        if self.mode == "connected":
            candidates = [a for a in candidates if self._outranks_master(a)]
        if not candidates:
            if self.mode != "connected":
                self._enter_emergency()
            return
        self._cycle = candidates
        self._cycle_active = True
        self._probe_next()

    def _probe_next(self) -> None:
        if not self._cycle:
            self._cycle_active = False
            if self.mode != "connected":
                self._enter_emergency()
            return
        target = self._cycle.pop(0)
        self._token += 1
        token = self._token
        handle = self.sim.schedule(
            self.cfg.connect_timeout_us,
            lambda: self._probe_timeout(token),
            target=self.node_id,
            kind="probe-timeout",
        )
        self._probe_wait = (token, handle)
        self._probe_target = target
        self._send(target, cp.ProbeRequest(self.node_id, token))

    def _probe_timeout(self, token: int) -> None:
        if self._probe_wait is None or self._probe_wait[0] != token:
            return
        self._probe_wait = None
        self._probe_next()

    def on_probe_reply(self, msg: cp.ProbeReply) -> None:
        if self._probe_wait is None or self._probe_wait[0] != msg.token:
            return
        if msg.controller != self._probe_target:
            return
        self._probe_wait[1].cancel()
        self._probe_wait = None
        self._cycle = []
        self._cycle_active = False
        accepted = msg.controller
        if self.mode == "connected":
            if self.sim.now() - self._last_change < to_us(self.cfg.hysteresis_hold_s):
                return
            self._hard_handover(accepted)
        else:
            self._open_connection(accepted)

    # -- connection lifecycle -----------------------------------------------

    def _hard_handover(self, to: IPv4Address) -> None:
        """Close the current connection, then connect to ``to``.

        Deliberately leaves every flow rule in place: traffic keeps flowing on
        whatever the old master installed until the new one decides otherwise.
        """
        assert self.conn is not None and self.conn.status == "established"
        old = self.conn.controller
        self._close_connection(notify=True)
        self._transition("disconnected", detail={"handover_from": str(old)})
        self._open_connection(to)

    def _open_connection(self, to: IPv4Address) -> None:
        assert self.conn is None or self.conn.status == "closed"
        self.conn = ControlConnection(self.node_id, to, "opening", self.sim.now())
        self._token += 1
        token = self._token
        handle = self.sim.schedule(
            self.cfg.connect_timeout_us,
            lambda: self._connect_timeout(token),
            target=self.node_id,
            kind="connect-timeout",
        )
        self._pending = (to, token, handle)
        self._transition("connecting")
        self._send(to, cp.ConnectRequest(self.node_id, token))

    def _connect_timeout(self, token: int) -> None:
        if self._pending is None or self._pending[1] != token:
            return
        self._pending = None
        self.conn = None
        self._transition("disconnected", detail={"reason": "connect-timeout"})
        self.sim.schedule(0, self.poll_tick, target=self.node_id, kind="poll")

    def on_connect_accept(self, msg: cp.ConnectAccept) -> None:
        if self._pending is None or self._pending[1] != msg.token:
            return
        to, _, handle = self._pending
        if msg.controller != to:
            return
        handle.cancel()
        self._pending = None
        assert self.conn is not None and self.conn.status == "opening"
        # Single-master invariant: the opening slot is the only connection.
        self.conn.status = "established"
        self._last_change = self.sim.now()
        if self._emergency_rules:
            self.switch.flush_rules(ORIGIN_EFTM)
            self._emergency_rules = False
        self._transition("connected")
        self._start_keepalives()

    def _close_connection(self, notify: bool) -> None:
        if self.conn is None:
            return
        if notify and self.conn.status == "established":
            self._send(self.conn.controller, cp.DisconnectNotice(self.node_id))
        self.conn.status = "closed"
        self.conn = None
        self._stop_keepalives()

    # -- keepalives ---------------------------------------------------------

    def _start_keepalives(self) -> None:
        self._keepalive_timer = self.sim.schedule(
            self.cfg.keepalive_interval_us,
            self._keepalive_tick,
            target=self.node_id,
            kind="keepalive",
        )

    def _stop_keepalives(self) -> None:
        if self._keepalive_timer is not None:
            self._keepalive_timer.cancel()
            self._keepalive_timer = None
        for handle in self._keepalive_waits.values():
            handle.cancel()
        self._keepalive_waits.clear()

    def _keepalive_tick(self) -> None:
        if self.master is None:
            return
        self._token += 1
        token = self._token
        self._keepalive_waits[token] = self.sim.schedule(
            self.cfg.connect_timeout_us,
            lambda: self._keepalive_timeout(token),
            target=self.node_id,
            kind="keepalive-timeout",
        )
        self._send(self.master, cp.KeepaliveRequest(self.node_id, token))
        self._keepalive_timer = self.sim.schedule(
            self.cfg.keepalive_interval_us,
            self._keepalive_tick,
            target=self.node_id,
            kind="keepalive",
        )

    def on_keepalive_reply(self, msg: cp.KeepaliveReply) -> None:
        handle = self._keepalive_waits.pop(msg.token, None)
        if handle is not None:
            handle.cancel()

    def _keepalive_timeout(self, token: int) -> None:
        if token not in self._keepalive_waits:
            return
        self.on_connection_lost("keepalive-timeout")

    def on_connection_lost(self, reason: str) -> None:
        if self.master is None:
            return
        self._close_connection(notify=False)
        self._transition("disconnected", detail={"reason": reason})
        # Out-of-cycle poll: do not wait for the next period boundary.
        self.sim.schedule(0, self.poll_tick, target=self.node_id, kind="poll")

    # -- emergency mode -----------------------------------------------------

    def _enter_emergency(self) -> None:
        if self.mode != "emergency":
            self._transition("emergency")
        if not self._emergency_rules:
            self._apply_emergency_policy()

    def _on_routes_changed(self) -> None:
        if self.mode == "emergency" and self._emergency_rules:
            self._apply_emergency_policy()

    def _apply_emergency_policy(self) -> None:
        if self.cfg.clear_controller_rules_on_emergency:
            self.switch.flush_rules("controller:*")
        self.switch.flush_rules(ORIGIN_EFTM)
        for rule in self._emergency_rule_set():
            self.switch.install_rule(rule)
        self._emergency_rules = True

    def _emergency_rule_set(self) -> list[FlowRule]:
        policy = self.cfg.emergency_policy
        rules: list[FlowRule] = []
        drop_all = FlowRule(
            priority=EMERGENCY_DROP_PRIORITY,
            dst_prefix=IPv4Network("0.0.0.0/0"),
            action=DropAction(),
            origin=ORIGIN_EFTM,
        )
        if policy == "control-only":
            return [drop_all]
        if policy == "allow-all":
            for prefix, entry in sorted(
                self.olsr.routing_table.entries.items(), key=lambda kv: str(kv[0])
            ):
                if prefix.subnet_of(self.switch.control_subnet):
                    continue
                action = DeliverLocal() if entry.next_hop is None else ForwardTo(entry.next_hop)
                rules.append(
                    FlowRule(
                        priority=EMERGENCY_FORWARD_PRIORITY,
                        dst_prefix=prefix,
                        action=action,
                        origin=ORIGIN_EFTM,
                    )
                )
            return rules
        # selective: forward only the listed prefixes, drop the rest
        for prefix in self.cfg.selective_prefixes:
            entry = self.olsr.routing_table.lookup(prefix.network_address)
            if entry is None:
                continue
            action = DeliverLocal() if entry.next_hop is None else ForwardTo(entry.next_hop)
            rules.append(
                FlowRule(
                    priority=EMERGENCY_FORWARD_PRIORITY,
                    dst_prefix=prefix,
                    action=action,
                    origin=ORIGIN_EFTM,
                )
            )
        rules.append(drop_all)
        return rules

    # -- bookkeeping --------------------------------------------------------

    def _transition(self, to: Mode, detail: dict | None = None) -> None:
        if to == self.mode and to != "connected":
            return
        data = {
            "node": self.node_id,
            "from": self.mode,
            "to": to,
            "master": str(self.master) if self.master is not None else None,
        }
        if detail:
            data.update(detail)
        self.mode = to
        self._log("EftmTransition", data)
