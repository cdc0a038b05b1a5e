"""Link-state routing daemon with Hello sensing, flooding, and HNA.

Each routing participant (mesh router or controller host) runs one
:class:`OlsrDaemon`.  Link liveness is inferred purely from Hello arrivals:
a neighbor becomes symmetric after ``hellos_to_up`` consecutive Hellos and
is dropped after ``hello_loss_intervals_to_down`` silent intervals.  Topology
and attached-network (HNA) information is flooded network-wide with per-origin
sequence numbers; there is no relay-set optimization, every node re-floods.

Routes are shortest-path by hop count with a deterministic tie-break: among
equal-cost paths, the one whose first hop has the numerically lowest address
wins.  The same tie-break is reused by the controller's path computation so
reactively installed rules always agree with what each hop would have routed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network
from typing import Callable, Iterable, Mapping

from .engine import SimTime, Simulator, to_us


@dataclass
class OlsrConfig:
    hello_interval_s: float = 5.0
    hellos_to_up: int = 3
    hello_loss_intervals_to_down: int = 3
    tc_interval_s: float = 5.0
    # Fractional jitter applied to both the Hello and flood timers.
    jitter: float = 0.1
    # When False, timers start at phase 0 with no random offset; unit tests
    # rely on this to pin emission instants.
    randomize_phase: bool = True

    def __post_init__(self) -> None:
        if self.hello_interval_s <= 0 or self.tc_interval_s <= 0:
            raise ValueError("timer intervals must be positive")
        if self.hellos_to_up < 1 or self.hello_loss_intervals_to_down < 1:
            raise ValueError("hello thresholds must be >= 1")
        if not 0.0 <= self.jitter < 0.5:
            raise ValueError("jitter must be in [0, 0.5)")

    @property
    def hello_interval_us(self) -> SimTime:
        return to_us(self.hello_interval_s)

    @property
    def neighbor_hold_us(self) -> SimTime:
        return self.hello_loss_intervals_to_down * self.hello_interval_us

    @property
    def tc_interval_us(self) -> SimTime:
        return to_us(self.tc_interval_s)

    @property
    def flood_validity_us(self) -> SimTime:
        # Entries survive three lost refreshes, mirroring neighbor expiry.
        return 3 * self.tc_interval_us


@dataclass(frozen=True)
class HelloMsg:
    origin: str
    address: IPv4Address


@dataclass(frozen=True)
class FloodMsg:
    """One origin's link-state advertisement, flooded everywhere."""

    origin: str
    seq: int
    addresses: tuple[IPv4Address, ...]
    neighbors: tuple[str, ...]
    hna: tuple[IPv4Network, ...]
    validity_us: SimTime


@dataclass
class NeighborRecord:
    neighbor: str
    address: IPv4Address
    consecutive_hellos: int
    last_hello_at: SimTime
    sym: bool = False


@dataclass
class LinkStateEntry:
    origin: str
    seq: int
    addresses: tuple[IPv4Address, ...]
    neighbors: tuple[str, ...]
    hna: tuple[IPv4Network, ...]
    expires_at: SimTime
    msg: FloodMsg


@dataclass(frozen=True)
class RouteEntry:
    prefix: IPv4Network
    next_hop: str | None  # None: deliver on a local interface
    hop_count: int
    origin: str


class RoutingTable:
    def __init__(self) -> None:
        self.entries: dict[IPv4Network, RouteEntry] = {}

    def lookup(self, addr: IPv4Address) -> RouteEntry | None:
        best: RouteEntry | None = None
        for prefix, entry in self.entries.items():
            if addr in prefix:
                if best is None or prefix.prefixlen > best.prefix.prefixlen:
                    best = entry
        return best

    def forwarding_map(self) -> dict[IPv4Network, tuple[str | None, int]]:
        return {p: (e.next_hop, e.hop_count) for p, e in self.entries.items()}


def first_hop_tree(
    adjacency: Mapping[str, Iterable[str]],
    source: str,
    addr_of: Callable[[str], IPv4Address | None],
) -> tuple[dict[str, int], dict[str, str]]:
    """Hop counts and first hops from ``source`` over an undirected graph.

    Among equal-cost paths the returned first hop is the one with the lowest
    address (node id as a final tie-break), which makes the result unique and
    independent of adjacency iteration order.
    """

    def hop_key(node: str) -> tuple[int, str]:
        addr = addr_of(node)
        return (int(addr) if addr is not None else 1 << 40, node)

    dist: dict[str, int] = {source: 0}
    first: dict[str, str] = {}
    layer = [source]
    depth = 0
    while layer:
        candidates: dict[str, str] = {}
        for u in layer:
            for v in adjacency.get(u, ()):
                if v in dist:
                    continue
                via = v if u == source else first[u]
                held = candidates.get(v)
                if held is None or hop_key(via) < hop_key(held):
                    candidates[v] = via
        depth += 1
        layer = sorted(candidates)
        for v in layer:
            dist[v] = depth
            first[v] = candidates[v]
    return dist, first


@dataclass(frozen=True)
class TopologySnapshot:
    """What a controller sees when it pulls the attached daemon's databases."""

    captured_at: SimTime
    adjacency: dict[str, tuple[str, ...]]
    addresses: dict[str, tuple[IPv4Address, ...]]
    hna: tuple[tuple[str, IPv4Network], ...]  # (origin, prefix)


class OlsrDaemon:
    """Routing process of one node.

    The daemon is transport-agnostic: ``links`` yields the node's routing
    links as ``(neighbor_id, link)`` pairs and ``send`` hands a message to the
    transport, which delivers it only if the link is physically Up.
    """

    def __init__(
        self,
        node_id: str,
        addresses: list[IPv4Address],
        originated_hna: list[IPv4Network],
        cfg: OlsrConfig,
        sim: Simulator,
        links: Callable[[], list[tuple[str, object]]],
        send: Callable[[object, object], None],
        log: Callable[[str, dict], None],
    ) -> None:
        self.node_id = node_id
        self.addresses = tuple(addresses)
        self.originated_hna = tuple(originated_hna)
        self.cfg = cfg
        self.sim = sim
        self._links = links
        self._send = send
        self._log = log

        self.neighbors: dict[str, NeighborRecord] = {}
        self.link_state: dict[str, LinkStateEntry] = {}
        self.routing_table = RoutingTable()
        self.routes_version = 0
        self.on_routes_changed: list[Callable[[], None]] = []
        self._seen_seq: dict[str, int] = {}
        self._own_seq = 0
        self._rng = sim.node_rng(node_id)

    # -- timers -------------------------------------------------------------

    def start(self) -> None:
        hello_phase = (
            round(self._rng.random() * self.cfg.hello_interval_us)
            if self.cfg.randomize_phase
            else 0
        )
        tc_phase = (
            round(self._rng.random() * self.cfg.tc_interval_us)
            if self.cfg.randomize_phase
            else 0
        )
        self.sim.schedule(hello_phase, self._hello_tick, target=self.node_id, kind="hello")
        self.sim.schedule(tc_phase, self._tc_tick, target=self.node_id, kind="tc")
        self._recompute()

    def _jittered(self, interval_us: SimTime) -> SimTime:
        if self.cfg.jitter == 0.0:
            return interval_us
        factor = 1.0 + self._rng.uniform(-self.cfg.jitter, self.cfg.jitter)
        return round(interval_us * factor)

    def _hello_tick(self) -> None:
        hello = HelloMsg(self.node_id, self.addresses[0])
        for _, link in self._links():
            self._send(link, hello)
        self.sim.schedule(
            self._jittered(self.cfg.hello_interval_us),
            self._hello_tick,
            target=self.node_id,
            kind="hello",
        )

    def _tc_tick(self) -> None:
        self._originate_flood()
        self.sim.schedule(
            self._jittered(self.cfg.tc_interval_us),
            self._tc_tick,
            target=self.node_id,
            kind="tc",
        )

    # -- neighbor sensing ---------------------------------------------------

    def sym_neighbors(self) -> list[str]:
        return sorted(n for n, rec in self.neighbors.items() if rec.sym)

    def handle_hello(self, msg: HelloMsg) -> None:
        now = self.sim.now()
        rec = self.neighbors.get(msg.origin)
        if rec is None:
            rec = NeighborRecord(msg.origin, msg.address, 0, now)
            self.neighbors[msg.origin] = rec
        rec.consecutive_hellos += 1
        rec.last_hello_at = now
        self.sim.schedule(
            self.cfg.neighbor_hold_us,
            lambda origin=msg.origin: self._neighbor_expiry_check(origin),
            target=self.node_id,
            kind="neighbor-expiry",
        )
        if not rec.sym and rec.consecutive_hellos >= self.cfg.hellos_to_up:
            rec.sym = True
            self._on_new_adjacency(msg.origin)

    def _neighbor_expiry_check(self, origin: str) -> None:
        rec = self.neighbors.get(origin)
        if rec is None:
            return
        if self.sim.now() - rec.last_hello_at >= self.cfg.neighbor_hold_us:
            was_sym = rec.sym
            del self.neighbors[origin]
            if was_sym:
                self._originate_flood()
                self._recompute()

    def _on_new_adjacency(self, neighbor: str) -> None:
        # Sync the stored database over the new link so a healed partition
        # learns the far side immediately instead of waiting out a full
        # refresh period, then advertise the new adjacency everywhere.
        link = self._link_to(neighbor)
        if link is not None:
            for origin in sorted(self.link_state):
                self._send(link, self.link_state[origin].msg)
        self._originate_flood()
        self._recompute()

    def _link_to(self, neighbor: str) -> object | None:
        for nbr, link in self._links():
            if nbr == neighbor:
                return link
        return None

    # -- flooding -----------------------------------------------------------

    def _originate_flood(self) -> None:
        self._own_seq += 1
        msg = FloodMsg(
            origin=self.node_id,
            seq=self._own_seq,
            addresses=self.addresses,
            neighbors=tuple(self.sym_neighbors()),
            hna=self.originated_hna,
            validity_us=self.cfg.flood_validity_us,
        )
        self._relay(msg, exclude_link=None)

    def handle_flood(self, msg: FloodMsg, arrival_link: object) -> None:
        if msg.origin == self.node_id:
            return
        if msg.seq <= self._seen_seq.get(msg.origin, 0):
            return
        self._seen_seq[msg.origin] = msg.seq
        now = self.sim.now()
        old = self.link_state.get(msg.origin)
        entry = LinkStateEntry(
            origin=msg.origin,
            seq=msg.seq,
            addresses=msg.addresses,
            neighbors=msg.neighbors,
            hna=msg.hna,
            expires_at=now + msg.validity_us,
            msg=msg,
        )
        self.link_state[msg.origin] = entry
        self.sim.schedule(
            msg.validity_us,
            lambda origin=msg.origin: self._entry_expiry_check(origin),
            target=self.node_id,
            kind="ls-expiry",
        )
        self._relay(msg, exclude_link=arrival_link)
        changed = (
            old is None
            or old.neighbors != entry.neighbors
            or old.addresses != entry.addresses
            or old.hna != entry.hna
        )
        if changed:
            self._recompute()

    def _entry_expiry_check(self, origin: str) -> None:
        entry = self.link_state.get(origin)
        if entry is not None and self.sim.now() >= entry.expires_at:
            del self.link_state[origin]
            self._recompute()

    def _relay(self, msg: FloodMsg, exclude_link: object | None) -> None:
        sym = set(self.sym_neighbors())
        for nbr, link in self._links():
            if nbr in sym and link is not exclude_link:
                self._send(link, msg)

    # -- route computation --------------------------------------------------

    def graph(self) -> dict[str, set[str]]:
        """Adjacency as this node currently believes it, self edges included.

        Own edges come from local Hello sensing; remote edges require both
        endpoints to advertise each other, so a half-expired link is unusable.
        """
        adj: dict[str, set[str]] = {self.node_id: set()}
        for nbr in self.sym_neighbors():
            adj[self.node_id].add(nbr)
            adj.setdefault(nbr, set()).add(self.node_id)
        for origin, entry in self.link_state.items():
            for other in entry.neighbors:
                if self.node_id in (origin, other):
                    continue
                peer = self.link_state.get(other)
                if peer is not None and origin in peer.neighbors:
                    adj.setdefault(origin, set()).add(other)
                    adj.setdefault(other, set()).add(origin)
        return adj

    def _addr_of(self, node: str) -> IPv4Address | None:
        if node == self.node_id:
            return self.addresses[0]
        entry = self.link_state.get(node)
        if entry is not None and entry.addresses:
            return entry.addresses[0]
        rec = self.neighbors.get(node)
        if rec is not None:
            return rec.address
        return None

    def _build_routes(self) -> dict[IPv4Network, RouteEntry]:
        dist, first = first_hop_tree(self.graph(), self.node_id, self._addr_of)
        entries: dict[IPv4Network, RouteEntry] = {}

        def offer(prefix: IPv4Network, entry: RouteEntry) -> None:
            held = entries.get(prefix)
            if held is None or (entry.hop_count, entry.origin) < (held.hop_count, held.origin):
                entries[prefix] = entry

        for prefix in self.originated_hna:
            offer(prefix, RouteEntry(prefix, None, 0, self.node_id))
        for node in sorted(dist, key=lambda n: (dist[n], n)):
            if node == self.node_id:
                continue
            hops = dist[node]
            via = first[node]
            entry = self.link_state.get(node)
            addresses: Iterable[IPv4Address]
            hna: Iterable[IPv4Network]
            if entry is not None:
                addresses, hna = entry.addresses, entry.hna
            else:
                rec = self.neighbors.get(node)
                addresses = (rec.address,) if rec is not None else ()
                hna = ()
            for addr in addresses:
                offer(
                    IPv4Network(f"{addr}/32"),
                    RouteEntry(IPv4Network(f"{addr}/32"), via, hops, node),
                )
            for prefix in hna:
                offer(prefix, RouteEntry(prefix, via, hops, node))
        return entries

    def _recompute(self) -> None:
        new = self._build_routes()
        if {p: (e.next_hop, e.hop_count) for p, e in new.items()} == (
            self.routing_table.forwarding_map()
        ):
            self.routing_table.entries = new
            return
        self.routing_table.entries = new
        self.routes_version += 1
        self._log(
            "OlsrRouteChange",
            {"node": self.node_id, "entries": len(new), "version": self.routes_version},
        )
        for callback in list(self.on_routes_changed):
            callback()

    # -- controller-facing view --------------------------------------------

    def hna_entries(self) -> list[tuple[str, IPv4Network, SimTime]]:
        """Live (origin, prefix, expires_at) tuples, own announcements included."""
        now = self.sim.now()
        out: list[tuple[str, IPv4Network, SimTime]] = []
        for prefix in self.originated_hna:
            out.append((self.node_id, prefix, 1 << 62))
        for origin in sorted(self.link_state):
            entry = self.link_state[origin]
            if entry.expires_at > now:
                for prefix in entry.hna:
                    out.append((origin, prefix, entry.expires_at))
        return out

    def snapshot(self) -> TopologySnapshot:
        adj = self.graph()
        addresses: dict[str, tuple[IPv4Address, ...]] = {self.node_id: self.addresses}
        for origin in sorted(self.link_state):
            addresses[origin] = self.link_state[origin].addresses
        for nbr, rec in sorted(self.neighbors.items()):
            addresses.setdefault(nbr, (rec.address,))
        return TopologySnapshot(
            captured_at=self.sim.now(),
            adjacency={n: tuple(sorted(vs)) for n, vs in sorted(adj.items())},
            addresses=addresses,
            hna=tuple((origin, prefix) for origin, prefix, _ in self.hna_entries()),
        )
