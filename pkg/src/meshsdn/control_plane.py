"""Payloads exchanged between switches and controllers over the control subnet.

All of these ride inside Basic-class packets, so they are routed by the
link-state tables and never touch the flow tables they manage.
"""
from __future__ import annotations

from dataclasses import dataclass
from ipaddress import IPv4Address

from .engine import SimTime
from .switch import RuleSpec


@dataclass(frozen=True)
class ProbeRequest:
    wmr: str
    token: int


@dataclass(frozen=True)
class ProbeReply:
    controller: IPv4Address
    token: int


@dataclass(frozen=True)
class ConnectRequest:
    wmr: str
    token: int


@dataclass(frozen=True)
class ConnectAccept:
    controller: IPv4Address
    token: int


@dataclass(frozen=True)
class DisconnectNotice:
    wmr: str


@dataclass(frozen=True)
class KeepaliveRequest:
    wmr: str
    token: int


@dataclass(frozen=True)
class KeepaliveReply:
    controller: IPv4Address
    token: int


@dataclass(frozen=True)
class PacketInMsg:
    """Miss report: enough header data for the controller to pick a path."""

    wmr: str
    src: IPv4Address
    dst: IPv4Address
    flow_id: str
    sent_at: SimTime


@dataclass(frozen=True)
class FlowModMsg:
    rule: RuleSpec


@dataclass(frozen=True)
class FlushMsg:
    origin_filter: str


@dataclass(frozen=True)
class PingRequest:
    probe_id: str
    seq: int
    sent_at: SimTime


@dataclass(frozen=True)
class PingReply:
    probe_id: str
    seq: int
    sent_at: SimTime
