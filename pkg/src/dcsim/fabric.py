"""Links, switch port queues with AQM, and the dumbbell / leaf-spine fabrics.

Serialization times are accrued inside each link as integer picoseconds
(exact fixed point for every whole-bit-rate link) and only rounded to integer
microseconds when an event is scheduled, so back-to-back frames never drift
the effective link rate.
"""

import zlib
from collections import deque
from enum import IntEnum

from .engine import Engine, EventKind

MTU_BYTES = 1500
PS_PER_US = 1_000_000


def ps_to_us(ps: int) -> int:
    """Round picoseconds to the nearest microsecond tick."""
    return (ps + PS_PER_US // 2) // PS_PER_US


class AdmitOutcome(IntEnum):
    ENQUEUED = 0
    ENQUEUED_MARKED = 1
    DROPPED = 2


class DropTail:
    name = "droptail"

    def admit(self, port, seg):
        if port.occupancy >= port.capacity_pkts:
            return AdmitOutcome.DROPPED
        return AdmitOutcome.ENQUEUED


class DropRand:
    """On overflow, push out a uniformly random queued packet and keep the arrival."""

    name = "droprand"

    def admit(self, port, seg):
        if port.occupancy >= port.capacity_pkts:
            victim = port.rng.randrange(port.occupancy)
            port.push_out(victim)
        return AdmitOutcome.ENQUEUED


class RedEcn:
    name = "red-ecn"

    def __init__(self, min_th=20.0, max_th=80.0, max_p=0.1, wq=0.002):
        self.min_th = min_th
        self.max_th = max_th
        self.max_p = max_p
        self.wq = wq
        self.avg_q = 0.0

    def admit(self, port, seg):
        self.avg_q = (1.0 - self.wq) * self.avg_q + self.wq * port.occupancy
        if port.occupancy >= port.capacity_pkts:
            return AdmitOutcome.DROPPED
        if self.avg_q < self.min_th:
            return AdmitOutcome.ENQUEUED
        if self.avg_q >= self.max_th:
            p = 1.0
        else:
            p = self.max_p * (self.avg_q - self.min_th) / (self.max_th - self.min_th)
        if p < 1.0 and port.rng.random() >= p:
            return AdmitOutcome.ENQUEUED
        if port.ecn_capable and seg.ect:
            return AdmitOutcome.ENQUEUED_MARKED
        return AdmitOutcome.DROPPED


class DctcpMark:
    """Instantaneous-threshold CE marking: mark iff occupancy at arrival >= K."""

    name = "dctcp"

    def __init__(self, k=20):
        self.k = k

    def admit(self, port, seg):
        if port.occupancy >= port.capacity_pkts:
            return AdmitOutcome.DROPPED
        if port.occupancy >= self.k and seg.ect:
            return AdmitOutcome.ENQUEUED_MARKED
        return AdmitOutcome.ENQUEUED


class Link:
    """One direction of a cable: capacity in bits/s plus fixed propagation."""

    __slots__ = ("capacity_bps", "propagation_us", "busy_until_ps")

    def __init__(self, capacity_bps: int, propagation_us: int):
        self.capacity_bps = capacity_bps
        self.propagation_us = propagation_us
        self.busy_until_ps = 0

    def serialization_ps(self, wire_bytes: int) -> int:
        return wire_bytes * 8 * 1_000_000_000_000 // self.capacity_bps

    def transmit(self, now: int, wire_bytes: int):
        """Claim the link for one frame; returns (free_at, deliver_at) in int us."""
        start = max(self.busy_until_ps, now * PS_PER_US)
        end = start + self.serialization_ps(wire_bytes)
        self.busy_until_ps = end
        free_at = ps_to_us(end)
        return free_at, free_at + self.propagation_us


class EgressPort:
    """A FIFO queue plus the link it drains into; one per (node, direction)."""

    def __init__(self, engine: Engine, name: str, link: Link, capacity_pkts: int,
                 aqm, rng, ecn_capable: bool = False):
        self.engine = engine
        self.name = name
        self.link = link
        self.capacity_pkts = capacity_pkts
        self.aqm = aqm
        self.rng = rng
        self.ecn_capable = ecn_capable
        self.entity_id = engine.register(self)
        self._items = deque()
        self._draining = False
        self.forced_drop_rule = None  # test hook: callable(seg) -> bool
        # counters
        self.enqueued = 0
        self.marked = 0
        self.dropped = 0
        self.pushed_out = 0
        self.forced_drops = 0

    @property
    def occupancy(self) -> int:
        return len(self._items)

    def push_out(self, index: int):
        items = self._items
        items.rotate(-index)
        items.popleft()
        items.rotate(index)
        self.pushed_out += 1

    def send(self, seg, path, hop_index, dst_entity):
        """Admit a segment heading to path[hop_index] == self."""
        if self.forced_drop_rule is not None and self.forced_drop_rule(seg):
            self.forced_drops += 1
            self.dropped += 1
            return AdmitOutcome.DROPPED
        outcome = self.aqm.admit(self, seg)
        if outcome == AdmitOutcome.DROPPED:
            self.dropped += 1
            return outcome
        if outcome == AdmitOutcome.ENQUEUED_MARKED:
            seg.ce = True
            self.marked += 1
        self.enqueued += 1
        self._items.append((seg, path, hop_index, dst_entity))
        if not self._draining:
            now = self.engine.now
            if self.link.busy_until_ps <= now * PS_PER_US:
                self._start_next()
            else:
                # link mid-frame with nothing else queued: wake at frame end
                self.engine.schedule(max(ps_to_us(self.link.busy_until_ps), now),
                                     EventKind.LINK_FREE, self.entity_id)
                self._draining = True
        return outcome

    def _start_next(self):
        seg, path, hop_index, dst_entity = self._items.popleft()
        engine = self.engine
        now = engine.now
        link = self.link
        free_at, _ = link.transmit(now, seg.wire_bytes())
        if free_at < now:
            free_at = now
        nxt = hop_index + 1
        if nxt < len(path):
            target = path[nxt].entity_id
            payload = (seg, path, nxt, dst_entity)
        else:
            target = dst_entity
            payload = seg
        engine.schedule(free_at + link.propagation_us,
                        EventKind.PACKET_ARRIVAL, target, payload)
        if self._items:
            # more frames wait behind this one: chain the next dequeue
            engine.schedule(free_at, EventKind.LINK_FREE, self.entity_id)
            self._draining = True
        else:
            self._draining = False

    def handle_event(self, ev):
        kind = ev[2]
        if kind is EventKind.PACKET_ARRIVAL:
            seg, path, hop_index, dst_entity = ev[4]
            self.send(seg, path, hop_index, dst_entity)
        elif kind is EventKind.LINK_FREE:
            if self._items:
                self._start_next()
            else:
                self._draining = False
        else:
            raise AssertionError(f"port {self.name} got {kind}")


def flow_hash(src, dst, sport, dport) -> int:
    """Deterministic 4-tuple hash (per-flow ECMP, independent of PYTHONHASHSEED)."""
    return zlib.crc32(f"{src}|{dst}|{sport}|{dport}".encode())


class ConfigError(ValueError):
    pass


class Network:
    """Built topology: hosts are integer ids 0..n_hosts-1, routing over EgressPorts."""

    def __init__(self, n_hosts):
        self.n_hosts = n_hosts
        self.host_entity = {}  # host id -> engine entity id, filled by the harness
        self.ports = []
        self.meta = {}

    def register_port(self, port):
        self.ports.append(port)
        return port

    def route(self, src, dst, sport, dport):
        raise NotImplementedError

    def path_for(self, src, dst, sport, dport):
        if not (0 <= src < self.n_hosts and 0 <= dst < self.n_hosts):
            raise ConfigError(f"unknown host in flow {src}->{dst}")
        return self.route(src, dst, sport, dport)

    def base_rtt_us(self, src, dst) -> int:
        raise NotImplementedError

    def drop_stats(self):
        stats = {"enqueued": 0, "marked": 0, "dropped": 0, "pushed_out": 0}
        for p in self.ports:
            stats["enqueued"] += p.enqueued
            stats["marked"] += p.marked
            stats["dropped"] += p.dropped
            stats["pushed_out"] += p.pushed_out
        return stats


def make_aqm(name, link_speed_bps, params=None):
    params = params or {}
    if name == "droptail":
        return DropTail()
    if name == "droprand":
        return DropRand()
    if name == "red-ecn":
        return RedEcn(min_th=params.get("red_min_th", 20.0),
                      max_th=params.get("red_max_th", 80.0),
                      max_p=params.get("red_max_p", 0.1),
                      wq=params.get("red_wq", 0.002))
    if name == "dctcp":
        k = params.get("dctcp_k")
        if not k:
            # anchors: 20 pkts at 1 Gb/s, 65 at 10 Gb/s; scale in between so
            # K stays below BDP-sized buffers on slower links
            if link_speed_bps <= 1_000_000_000:
                k = 20
            else:
                k = max(5, min(65, round(65 * link_speed_bps / 10_000_000_000)))
        return DctcpMark(k=k)
    raise ConfigError(f"unknown aqm: {name}")


class Dumbbell(Network):
    """n senders -> switch -> one bottleneck link -> one receiver.

    Host links and bottleneck run at the same rate; propagation split so the
    unloaded host-to-host round trip is rtt_us.
    """

    def __init__(self, engine, n_senders, aqm_name, aqm_params=None,
                 link_bps=1_000_000_000, buffer_pkts=100, rtt_us=100,
                 ecn_capable=False):
        super().__init__(n_senders + 1)
        self.n_senders = n_senders
        self.receiver = n_senders
        hop_prop = rtt_us // 4  # two hops out, two hops back
        deep = 10_000
        rng = engine.rng.stream("droprand")

        def mk(name, aqm, cap):
            link = Link(link_bps, hop_prop)
            return self.register_port(EgressPort(
                engine, name, link, cap, aqm, rng, ecn_capable=ecn_capable))

        self.host_tx = [mk(f"h{i}->sw", DropTail(), deep) for i in range(n_senders)]
        self.bottleneck = mk("sw->recv", make_aqm(aqm_name, link_bps, aqm_params),
                             buffer_pkts)
        self.recv_tx = mk("recv->sw", DropTail(), deep)
        self.to_sender = [mk(f"sw->h{i}", DropTail(), deep) for i in range(n_senders)]
        self.meta = {
            "topology": "dumbbell", "n_senders": n_senders, "link_bps": link_bps,
            "buffer_pkts": buffer_pkts, "base_rtt_us": rtt_us,
            "bottleneck_bps": link_bps,
            "pkt_tx_us": MTU_BYTES * 8 * 1_000_000 / link_bps,
        }

    def route(self, src, dst, sport, dport):
        if dst == self.receiver and src < self.n_senders:
            return (self.host_tx[src], self.bottleneck)
        if src == self.receiver and dst < self.n_senders:
            return (self.recv_tx, self.to_sender[dst])
        raise ConfigError(f"dumbbell has no sender-to-sender path ({src}->{dst})")

    def base_rtt_us(self, src, dst):
        return self.meta["base_rtt_us"]


class LeafSpine(Network):
    """n_leaf racks x hosts_per_leaf hosts, n_spine spines, per-flow ECMP uplinks.

    Uplink speed is derived from the oversubscription ratio; every queue holds
    the intra-rack bandwidth-delay product rounded up to whole packets.
    """

    def __init__(self, engine, n_leaf=9, n_spine=4, hosts_per_leaf=4, oversub=5,
                 hop_delay_us=50, host_bps=10_000_000_000, aqm_name="droptail",
                 aqm_params=None, ecn_capable=False, buffer_pkts=None):
        super().__init__(n_leaf * hosts_per_leaf)
        self.n_leaf = n_leaf
        self.n_spine = n_spine
        self.hosts_per_leaf = hosts_per_leaf
        uplink_bps = (hosts_per_leaf * host_bps) // (oversub * n_spine)
        intra_rtt_us = 4 * hop_delay_us
        rng = engine.rng.stream("droprand")

        def bdp_pkts(bps):
            if buffer_pkts is not None:
                return buffer_pkts
            # the link's own rate times the intra-rack RTT, whole packets up
            return -(-bps * intra_rtt_us // (1_000_000 * MTU_BYTES * 8))

        def mk(name, bps, aqm_of_speed, cap):
            link = Link(bps, hop_delay_us)
            aqm = make_aqm(aqm_of_speed, bps, aqm_params) if aqm_of_speed else DropTail()
            return self.register_port(EgressPort(
                engine, name, link, cap, aqm, rng, ecn_capable=ecn_capable))

        self.host_tx = [mk(f"h{h}->leaf", host_bps, None, bdp_pkts(host_bps))
                        for h in range(self.n_hosts)]
        self.leaf_down = {}  # keyed by destination host id
        for h in range(self.n_hosts):
            l = h // hosts_per_leaf
            self.leaf_down[h] = mk(f"leaf{l}->h{h}", host_bps, aqm_name,
                                   bdp_pkts(host_bps))
        self.leaf_up = [[mk(f"leaf{l}->s{s}", uplink_bps, aqm_name,
                            bdp_pkts(uplink_bps))
                         for s in range(n_spine)] for l in range(n_leaf)]
        self.spine_down = [[mk(f"s{s}->leaf{l}", uplink_bps, aqm_name,
                               bdp_pkts(uplink_bps))
                            for l in range(n_leaf)] for s in range(n_spine)]
        self.meta = {
            "topology": "leafspine", "n_leaf": n_leaf, "n_spine": n_spine,
            "hosts_per_leaf": hosts_per_leaf, "oversub": oversub,
            "host_bps": host_bps, "uplink_bps": uplink_bps,
            "buffer_pkts": bdp_pkts(host_bps),
            "uplink_buffer_pkts": bdp_pkts(uplink_bps),
            "hop_delay_us": hop_delay_us,
            "base_rtt_us": 8 * hop_delay_us, "intra_rtt_us": intra_rtt_us,
            # load denominator: aggregate one-direction core capacity, so
            # "load 0.7" means uplinks average ~70% utilization
            "bisection_bps": n_leaf * n_spine * uplink_bps,
            "pkt_tx_us": MTU_BYTES * 8 * 1_000_000 / host_bps,
        }

    def leaf_of(self, h):
        return h // self.hosts_per_leaf

    def route(self, src, dst, sport, dport):
        if src == dst:
            raise ConfigError(f"flow to self: {src}")
        la, lb = self.leaf_of(src), self.leaf_of(dst)
        if la == lb:
            return (self.host_tx[src], self.leaf_down[dst])
        s = flow_hash(src, dst, sport, dport) % self.n_spine
        return (self.host_tx[src], self.leaf_up[la][s],
                self.spine_down[s][lb], self.leaf_down[dst])

    def base_rtt_us(self, src, dst):
        if self.leaf_of(src) == self.leaf_of(dst):
            return self.meta["intra_rtt_us"]
        return self.meta["base_rtt_us"]
