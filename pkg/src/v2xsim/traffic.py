"""Deterministic periodic arrivals and FIFO bit queues with per-packet latency."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

INFOTAINMENT = 0
AUTONOMOUS = 1
SLICES = ("infotainment", "autonomous")

VIDEO_PACKET_BITS = 1000
SAFETY_PACKET_BITS = 1280
SAFETY_PERIOD_TTI = 10

NOMINAL_PACKET_BITS = (VIDEO_PACKET_BITS, SAFETY_PACKET_BITS)


@dataclass(slots=True)
class Packet:
    flow_id: int
    size_bits: int
    arrival_tti: int
    bits_remaining: int
    slice: int = INFOTAINMENT
    failed: bool = False
    departure_tti: Optional[int] = None

    @classmethod
    def new(cls, flow_id: int, size_bits: int, arrival_tti: int, slice: int = INFOTAINMENT) -> "Packet":
        return cls(flow_id, size_bits, arrival_tti, size_bits, slice)


def safety_phase(vehicle_id: int) -> int:
    return vehicle_id % SAFETY_PERIOD_TTI


def generate_arrivals(t: int, flow_class: int, flow_id: int = 0, phase: int = 0) -> list[Packet]:
    if flow_class == INFOTAINMENT:
        return [Packet.new(flow_id, VIDEO_PACKET_BITS, t, INFOTAINMENT)]
    if t % SAFETY_PERIOD_TTI == phase:
        return [Packet.new(flow_id, SAFETY_PACKET_BITS, t, AUTONOMOUS)]
    return []


def packet_latency(packet: Packet) -> int:
    """Queuing latency in TTIs (ms); a packet served in its arrival TTI counts 1."""
    if packet.departure_tti is None:
        raise ValueError("packet has not departed")
    return packet.departure_tti - packet.arrival_tti + 1


class PacketQueue:
    """FIFO of packets measured in bits. Packets may be served partially."""

    __slots__ = ("packets", "total_bits", "slice_bits")

    def __init__(self):
        self.packets: deque[Packet] = deque()
        self.total_bits = 0
        self.slice_bits = [0, 0]

    def __len__(self):
        return len(self.packets)

    def push(self, packet: Packet) -> None:
        self.packets.append(packet)
        self.total_bits += packet.bits_remaining
        self.slice_bits[packet.slice] += packet.bits_remaining

    def extend(self, packets: Iterable[Packet]) -> None:
        for p in packets:
            self.push(p)

    def _drain(self, bits: int, tti: int, fail: bool) -> tuple[list[Packet], list[int]]:
        if bits < 0 or bits > self.total_bits:
            raise AssertionError(f"cannot remove {bits} bits from a queue holding {self.total_bits}")
        done = []
        removed = [0, 0]
        packets = self.packets
        while bits > 0:
            head = packets[0]
            take = head.bits_remaining if head.bits_remaining <= bits else bits
            head.bits_remaining -= take
            removed[head.slice] += take
            bits -= take
            if fail:
                head.failed = True
            if head.bits_remaining == 0:
                head.departure_tti = tti
                done.append(packets.popleft())
        self.total_bits -= removed[0] + removed[1]
        self.slice_bits[0] -= removed[0]
        self.slice_bits[1] -= removed[1]
        return done, removed

    def serve(self, bits: int, tti: int) -> tuple[list[Packet], list[int]]:
        """Drain ``bits`` from the head. Returns completed packets and bits removed per slice."""
        return self._drain(bits, tti, fail=False)

    def drop(self, bits: int, tti: int) -> tuple[list[Packet], list[int]]:
        """Discard ``bits`` from the head; every packet touched is marked failed."""
        return self._drain(bits, tti, fail=True)

    def packet_count(self, slice: int, nominal_bits: int) -> int:
        return -(-self.slice_bits[slice] // nominal_bits)


def update_queue(queue: PacketQueue, served_bits: int, arrivals: Iterable[Packet], tti: int) -> list[Packet]:
    """One TTI of q(t+1) = [q(t) - r(t)]^+ + arrivals, arrivals enqueued before service."""
    queue.extend(arrivals)
    done, _ = queue.serve(served_bits, tti)
    return done
