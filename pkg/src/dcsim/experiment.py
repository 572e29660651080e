"""Assembles one simulation run: topology, hosts, shims, flows, metrics.

A Host is the event-handling entity gluing its TCP endpoints to the fabric.
Outgoing segments from local senders and incoming ACKs toward local senders
pass through the host's shim instance (when enabled); traffic toward local
receivers bypasses it, as do locally injected spoofs.
"""

import hashlib
import time
from dataclasses import dataclass, field

from .engine import Engine, EventKind
from .fabric import ConfigError, Dumbbell, LeafSpine
from .metrics import Collector, RecoveryEvent, flow_record_from_sim
from .shim import Disposition, DupAckShim, ShimConfig
from .tcp import TcpConfig, TcpReceiver, TcpSender
from . import workload


class Host:
    def __init__(self, sim, host_id):
        self.sim = sim
        self.engine = sim.engine
        self.host_id = host_id
        self.entity_id = self.engine.register(self)
        self.senders = {}     # flow key (sender-oriented) -> TcpSender
        self.receivers = {}   # flow key (sender-oriented) -> TcpReceiver
        self.paths = {}
        self.shim = None
        self._tick_scheduled = False
        self.stray_segments = 0
        self.delivered_segments = 0

    @property
    def now(self):
        return self.engine.now

    # -- event dispatch -----------------------------------------------------

    def handle_event(self, ev):
        kind = ev[2]
        if kind is EventKind.PACKET_ARRIVAL:
            self.deliver(ev[4])
        elif kind is EventKind.TIMER_EXPIRY:
            payload = ev[4]
            what = payload[0]
            if what == "conn":
                _, key, gen = payload
                conn = self.senders.get(key)
                if conn is not None:
                    conn.on_timer(gen)
            elif what == "tick":
                self._on_tick()
        else:
            raise AssertionError(f"host {self.host_id} got {kind}")

    def deliver(self, seg):
        self.delivered_segments += 1
        if seg.payload_len == 0 and seg.is_ack:
            # pure ACK (incl. SYN-ACK and injected spoofs) for a local sender
            sender = self.senders.get(seg.reverse_key())
            if sender is None:
                self.stray_segments += 1
                return
            if self.shim is not None and not seg.spoofed:
                if self.shim.on_incoming(seg) == Disposition.DROP:
                    return
            sender.on_ack(seg)
            return
        receiver = self.receivers.get(seg.flow_key())
        if receiver is None:
            self.stray_segments += 1
            return
        ack = receiver.on_segment(seg)
        if ack is not None:
            self.transmit_raw(ack)

    # -- transmission --------------------------------------------------------

    def _path(self, key):
        path = self.paths.get(key)
        if path is None:
            src, dst, sport, dport = key
            path = (self.sim.net.path_for(src, dst, sport, dport),
                    self.sim.net.host_entity[dst])
            self.paths[key] = path
        return path

    def transmit_from_sender(self, conn, seg):
        if self.shim is not None:
            self.shim.on_outgoing(seg)
            self._ensure_tick()
        ports, dst_entity = self._path(conn.key)
        ports[0].send(seg, ports, 0, dst_entity)

    def transmit_raw(self, seg):
        ports, dst_entity = self._path(seg.flow_key())
        ports[0].send(seg, ports, 0, dst_entity)

    # -- shim glue -------------------------------------------------------------

    def _ensure_tick(self):
        if self._tick_scheduled or self.shim is None or not len(self.shim.table):
            return
        tick = self.shim.cfg.tick_us
        nxt = (self.now // tick + 1) * tick
        self.engine.schedule(nxt, EventKind.TIMER_EXPIRY, self.entity_id, ("tick",))
        self._tick_scheduled = True

    def _on_tick(self):
        self._tick_scheduled = False
        spoofs = self.shim.on_tick()
        for i, seg in enumerate(spoofs):
            self.engine.schedule(self.now + i, EventKind.PACKET_ARRIVAL,
                                 self.entity_id, seg)
        if len(self.shim.table):
            tick = self.shim.cfg.tick_us
            self.engine.schedule(self.now + tick, EventKind.TIMER_EXPIRY,
                                 self.entity_id, ("tick",))
            self._tick_scheduled = True

    # -- TCP callbacks -----------------------------------------------------------

    def set_conn_timer(self, conn, delay_us, generation):
        self.engine.schedule_in(delay_us, EventKind.TIMER_EXPIRY,
                                self.entity_id, ("conn", conn.key, generation))

    def flow_completed(self, conn):
        if self.shim is not None:
            self.shim.deactivate(conn.key)
        self.sim.on_flow_complete(conn)

    def record_recovery(self, conn, kind, cwnd_mss, loss_index_fraction,
                        burst_fraction, duration_us, rack_assisted):
        self.sim.collector.record_recovery(RecoveryEvent(
            flow_id=conn.flow_id, kind=kind, cwnd_mss=cwnd_mss,
            loss_index_fraction=loss_index_fraction,
            burst_fraction=burst_fraction,
            recovery_duration_us=duration_us))


def _flow_ports(flow_id):
    return 1024 + flow_id % 60000, 80 + flow_id // 60000


def schedule_hash(flows):
    h = hashlib.sha256()
    for f in flows:
        h.update(f"{f.flow_id},{f.src},{f.dst},{f.size_bytes},{f.start_us};"
                 .encode())
    return h.hexdigest()


@dataclass
class RunResult:
    records: list
    recovery: list
    shim_counters: dict
    meta: dict
    cwnd_logs: dict = field(default_factory=dict)


class Simulation:
    """One seeded run of one configuration."""

    def __init__(self, config, flows=None):
        config.resolve().validate()
        self.config = config
        self.engine = Engine(config.seed)
        self.collector = Collector()
        self.net = self._build_network()
        self.hosts = [Host(self, h) for h in range(self.net.n_hosts)]
        for h in self.hosts:
            self.net.host_entity[h.host_id] = h.entity_id
        self.entity_id = self.engine.register(self)
        if config.shim:
            jitter = self.engine.rng.stream("jitter")
            for h in self.hosts:
                h.shim = DupAckShim(self._shim_config(), lambda: self.engine.now,
                                    jitter)
        self.tcp_cfg = TcpConfig(
            variant=config.tcp, phi=config.phi, sack=config.sack,
            timestamps=config.timestamps, rto_min_us=config.rto_min_us,
            init_cwnd_mss=config.init_cwnd, trace_cwnd=config.trace_cwnd)
        self.flows = flows if flows is not None else self._build_schedule()
        self.schedule_hash = schedule_hash(self.flows)
        self.specs = {f.flow_id: f for f in self.flows}
        self.senders = {}
        self._isn_rng = self.engine.rng.stream("isn")
        self._install_drop_rule()
        self.duration_us = int(config.duration_s * 1_000_000)
        self.cwnd_logs = {}
        self.integrity_failures = []

    # -- construction ----------------------------------------------------------

    def _build_network(self):
        cfg = self.config
        ecn = cfg.tcp in ("newreno-ecn", "dctcp")
        aqm_params = {"red_min_th": cfg.red_min_th, "red_max_th": cfg.red_max_th,
                      "red_max_p": cfg.red_max_p, "red_wq": cfg.red_wq,
                      "dctcp_k": cfg.dctcp_k}
        if cfg.topology == "dumbbell":
            return Dumbbell(self.engine, cfg.flows, cfg.aqm, aqm_params,
                            link_bps=cfg.link_bps, buffer_pkts=cfg.buffer_pkts,
                            rtt_us=cfg.rtt_us, ecn_capable=ecn)
        if cfg.topology == "leafspine":
            return LeafSpine(self.engine, n_leaf=cfg.n_leaf, n_spine=cfg.n_spine,
                             hosts_per_leaf=cfg.hosts_per_leaf,
                             oversub=cfg.oversub, hop_delay_us=cfg.hop_delay_us,
                             host_bps=cfg.host_bps, aqm_name=cfg.aqm,
                             aqm_params=aqm_params, ecn_capable=ecn)
        raise ConfigError(f"unknown topology {cfg.topology!r}")

    def _shim_config(self):
        cfg = self.config
        return ShimConfig(
            alpha=cfg.alpha, gamma=cfg.gamma_or_none, phi=cfg.phi,
            rto_min_us=cfg.rto_min_us, tick_us=cfg.tick_us,
            inactivity_timeout_us=cfg.inactivity_timeout_us,
            default_rtt_us=self.net.meta["base_rtt_us"],
            table_size=cfg.shim_table_size, enabled=True)

    def _build_schedule(self):
        cfg = self.config
        duration_us = int(cfg.duration_s * 1_000_000)
        arrivals = self.engine.rng.stream("arrivals")
        shuffle = self.engine.rng.stream("shuffle")
        sizes = self.engine.rng.stream("sizes")
        if cfg.scenario == "case1":
            return workload.gen_case1(cfg.flows, duration_us,
                                      self.net.meta["pkt_tx_us"],
                                      self.net.receiver, arrivals, shuffle)
        if cfg.scenario == "case2":
            return workload.gen_case2(cfg.flows, duration_us,
                                      self.net.meta["pkt_tx_us"],
                                      self.net.receiver,
                                      self.net.meta["bottleneck_bps"],
                                      arrivals, shuffle)
        if cfg.scenario == "poisson":
            cdf = workload.FlowSizeCdf.builtin(cfg.workload)
            cap = self.net.meta["bisection_bps"]
            if cfg.pattern == "one_to_all":
                # everything funnels through the client rack's uplinks
                cap = self.net.meta["n_spine"] * self.net.meta["uplink_bps"]
            return workload.gen_poisson_flows(
                cfg.load, cdf, self.net.n_hosts, cap,
                duration_us, cfg.pattern, arrivals, sizes, shuffle,
                hosts_per_leaf=cfg.hosts_per_leaf)
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")

    def _install_drop_rule(self):
        rule_name = self.config.drop_rule
        if rule_name == "none":
            return
        if rule_name == "tail":
            def rule(seg):
                return seg.payload_len > 0 and not seg.retx and seg.is_last
        elif rule_name == "head":
            min_cwnd = self.config.drop_head_min_cwnd

            def rule(seg):
                return (seg.payload_len > 0 and not seg.retx
                        and seg.win_off == 0 and seg.cwnd_at_tx >= min_cwnd)
        else:
            raise ConfigError(f"unknown drop rule {rule_name!r}")
        for port in self._drop_rule_ports():
            port.forced_drop_rule = rule

    def _drop_rule_ports(self):
        if self.config.topology == "dumbbell":
            return [self.net.bottleneck]
        return [p for p in self.net.ports]

    # -- flow lifecycle -----------------------------------------------------------

    def handle_event(self, ev):
        assert ev[2] is EventKind.APP_FLOW_START
        self._start_flow(ev[4])

    def _start_flow(self, spec):
        sport, dport = _flow_ports(spec.flow_id)
        key = (spec.src, spec.dst, sport, dport)
        isn_s = self._isn_rng.randrange(1 << 32)
        isn_r = self._isn_rng.randrange(1 << 32)
        sender = TcpSender(self.hosts[spec.src], spec.flow_id, key,
                           spec.size_bytes, self.tcp_cfg, isn_s)
        receiver = TcpReceiver(self.hosts[spec.dst], spec.flow_id,
                               (spec.dst, spec.src, dport, sport),
                               self.tcp_cfg, isn_r)
        self.hosts[spec.src].senders[key] = sender
        self.hosts[spec.dst].receivers[key] = receiver
        self.senders[spec.flow_id] = sender
        sender.start()

    def on_flow_complete(self, sender):
        spec = self.specs[sender.flow_id]
        self.collector.record_flow(flow_record_from_sim(spec, sender))
        if self.config.trace_cwnd:
            self.cwnd_logs[sender.flow_id] = list(sender.cwnd_log)
        receiver = self.hosts[spec.dst].receivers.pop(sender.key, None)
        if receiver is not None and receiver.delivered_bytes != spec.size_bytes:
            self.integrity_failures.append(
                (spec.flow_id, receiver.delivered_bytes, spec.size_bytes))
        del self.hosts[spec.src].senders[sender.key]

    # -- run ---------------------------------------------------------------------

    def run(self) -> RunResult:
        t0 = time.monotonic()
        for spec in self.flows:
            self.engine.schedule(spec.start_us, EventKind.APP_FLOW_START,
                                 self.entity_id, spec)
        self.engine.run_until(self.duration_us)
        for fid, sender in self.senders.items():
            if fid not in self.collector.flows:
                # truncated at run end (or never completed the handshake)
                self.collector.record_flow(
                    flow_record_from_sim(self.specs[fid], sender))
                if self.config.trace_cwnd:
                    self.cwnd_logs[fid] = list(sender.cwnd_log)
        shim_counters = self._shim_totals()
        meta = self._metadata(shim_counters, time.monotonic() - t0)
        return RunResult(records=self.collector.records(),
                         recovery=list(self.collector.recovery),
                         shim_counters=shim_counters, meta=meta,
                         cwnd_logs=self.cwnd_logs)

    def _shim_totals(self):
        totals = {}
        for h in self.hosts:
            if h.shim is None:
                continue
            for k, v in h.shim.counters.items():
                totals[k] = totals.get(k, 0) + v
        return totals

    def _metadata(self, shim_counters, wall_s):
        meta = {
            "seed": self.config.seed,
            "config_hash": self.config.digest(),
            "schedule_hash": self.schedule_hash,
            "flows_generated": len(self.flows),
            "flows_completed": sum(1 for r in self.collector.records()
                                   if r.completed),
            "events_scheduled": self.engine.scheduled_count,
            "events_dispatched": self.engine.dispatched_count,
            "events_pending_at_end": self.engine.pending(),
            "wall_seconds": round(wall_s, 3),
            "stray_segments": sum(h.stray_segments for h in self.hosts),
            "integrity_failures": len(self.integrity_failures),
        }
        for k, v in self.net.meta.items():
            meta[f"net_{k}"] = v
        for k, v in self.net.drop_stats().items():
            meta[f"fabric_{k}"] = v
        for k, v in shim_counters.items():
            meta[f"shim_{k}"] = v
        for k, v in self.config.as_dict().items():
            meta[f"cfg_{k}"] = v
        return meta


def run_config(config, flows=None) -> RunResult:
    return Simulation(config, flows=flows).run()
