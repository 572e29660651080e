import random

import pytest

from dcsim.tcp import Segment, TcpConfig, TcpSender


class FakeHost:
    """Minimal stand-in for experiment.Host: records transmissions and timers."""

    def __init__(self):
        self.now = 0
        self.sent = []
        self.timers = []
        self.completions = []
        self.recoveries = []

    def transmit_from_sender(self, conn, seg):
        self.sent.append(seg)

    def set_conn_timer(self, conn, delay_us, generation):
        self.timers.append((self.now + delay_us, generation))

    def flow_completed(self, conn):
        self.completions.append((self.now, conn.flow_id))

    def record_recovery(self, conn, kind, cwnd_mss, loss_index_fraction,
                        burst_fraction, duration_us, rack_assisted):
        self.recoveries.append({
            "kind": kind, "cwnd": cwnd_mss, "loss_index": loss_index_fraction,
            "burst": burst_fraction, "duration": duration_us,
            "rack": rack_assisted})

    def fire_due_timers(self, conn):
        due = [(t, g) for t, g in self.timers if t <= self.now]
        self.timers = [(t, g) for t, g in self.timers if t > self.now]
        for _, gen in due:
            conn.on_timer(gen)


KEY = (0, 1, 1024, 80)
RKEY = (1, 0, 80, 1024)


def make_sender(size=14600, cfg=None, isn=1000, host=None):
    host = host or FakeHost()
    sender = TcpSender(host, 0, KEY, size, cfg or TcpConfig(), isn)
    return host, sender


def establish(host, sender, rtt_us=100, receiver_isn=5000):
    """Run the SYN/SYN-ACK exchange by hand."""
    sender.start()
    syn_ts = host.sent[-1].ts_val
    host.now += rtt_us
    synack = Segment(*RKEY, seq=receiver_isn, ack=(sender.isn + 1) & 0xFFFFFFFF,
                     syn=True, is_ack=True, ts_val=host.now, ts_ecr=syn_ts)
    sender.on_ack(synack)
    return sender


def ack_for(sender, ack_abs, host, ece=False, sack_blocks=(), spoofed=False,
            ts_val=None):
    seg = Segment(*RKEY, seq=5001, ack=ack_abs & 0xFFFFFFFF, is_ack=True,
                  ece=ece, ts_val=host.now if ts_val is None else ts_val,
                  ts_ecr=_latest_ts(sender, host), sack_blocks=sack_blocks)
    seg.spoofed = spoofed
    return seg


def _latest_ts(sender, host):
    if not sender.cfg.timestamps:
        return None
    for seg in reversed(host.sent):
        if seg.ts_val is not None:
            return seg.ts_val
    return None


@pytest.fixture
def rng():
    return random.Random(42)
