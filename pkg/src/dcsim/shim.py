"""Host-side fast-recovery shim.

Sits on a host's packet path, tracks small flows by 4-tuple, and when a flow
has seen no ACK progress for beta = alpha*RTT + jitter, injects spoofed
duplicate ACKs at the local sender to force fast retransmit instead of an
RTO_min-bounded timeout. While a spoof episode is open, real duplicate ACKs
for that flow are dropped so the sender's window is not artificially inflated
by them.

Three handlers per host, all serialized in event order: outgoing packets,
incoming ACKs, and a periodic tick that walks the flow table.
"""

from dataclasses import dataclass
from enum import IntEnum

from .tcp import SEQ_MASK, SEQ_HALF, Segment, wrap

FAKE_SACK_GAP = 1460     # one MSS past the cumulative ACK
FAKE_SACK_BYTES = 40     # minimum segment size


class Disposition(IntEnum):
    PASS = 0
    PASS_REWRITTEN = 1
    DROP = 2


@dataclass
class ShimConfig:
    alpha: int = 10                    # RTTs of silence before spoofing
    gamma: int | None = 100_000        # bytes acked before a flow is long-lived
    phi: int = 3                       # sender dupACK threshold to reach
    rto_min_us: int = 200_000
    tick_us: int = 1_000
    inactivity_timeout_us: int = 1_000_000
    default_rtt_us: int = 100
    table_size: int = 4096
    enabled: bool = True

    def validate(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.tick_us < 1:
            raise ValueError("tick period must be >= 1 us")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive or None (infinite)")


class FlowEntry:
    __slots__ = ("key", "active", "long_lived", "last_ack_no", "dup_ack_nr",
                 "ack_time", "active_time", "last_seq_sent", "resent",
                 "resent_time", "x", "rtt_est", "ts_recent", "ts_ecr_recent",
                 "ack_seq_field", "sack_seen", "tstamp_seen", "isn")

    def __init__(self):
        self.key = None
        self.reset(None, 0)
        self.active = False

    def reset(self, key, now):
        self.key = key
        self.active = True
        self.long_lived = False
        self.last_ack_no = 0
        self.dup_ack_nr = 0
        self.ack_time = now
        self.active_time = now
        self.last_seq_sent = 0
        self.resent = 0
        self.resent_time = 0
        self.x = 2
        self.rtt_est = 0
        self.ts_recent = 0
        self.ts_ecr_recent = 0
        self.ack_seq_field = 0
        self.sack_seen = False
        self.tstamp_seen = False
        self.isn = 0

    def cumulative_acked(self):
        return (self.last_ack_no - self.isn) & SEQ_MASK


class FlowTable:
    """Bounded map of live 4-tuples to entries, backed by a reuse pool."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries = {}
        self._pool = []

    def lookup(self, key):
        return self.entries.get(key)

    def acquire(self, key, now):
        entry = self.entries.get(key)
        if entry is None:
            if len(self.entries) >= self.capacity:
                return None
            entry = self._pool.pop() if self._pool else FlowEntry()
            self.entries[key] = entry
        entry.reset(key, now)
        return entry

    def release(self, key):
        entry = self.entries.pop(key, None)
        if entry is not None:
            entry.active = False
            self._pool.append(entry)

    def __len__(self):
        return len(self.entries)

    def values(self):
        return self.entries.values()


def _new_ack(ack, last):
    delta = (ack - last) & SEQ_MASK
    return 0 < delta < SEQ_HALF


class DupAckShim:
    """Per-host instance; no state is shared between hosts."""

    def __init__(self, cfg: ShimConfig, clock, jitter_rng):
        cfg.validate()
        self.cfg = cfg
        self.clock = clock          # callable returning current time in us
        self.jitter = jitter_rng
        self.table = FlowTable(cfg.table_size)
        self.counters = {
            "spoofed_acks_sent": 0,
            "dupacks_dropped": 0,
            "episodes_opened": 0,
            "episodes_stopped_at_rtomin": 0,
            "flows_tracked": 0,
            "flows_marked_long_lived": 0,
            "untracked_flows": 0,
        }

    # -- Outgoing packet event handler ------------------------------------

    def on_outgoing(self, seg: Segment):
        if not self.cfg.enabled:
            return
        now = self.clock()
        key = seg.flow_key()
        entry = self.table.lookup(key)
        if seg.syn or entry is None or not entry.active:
            entry = self.table.acquire(key, now)
            if entry is None:
                self.counters["untracked_flows"] += 1
                return  # table full: fail open, forward untouched
            entry.isn = seg.seq
            entry.last_ack_no = seg.seq
            entry.sack_seen = seg.sack_ok
            entry.tstamp_seen = seg.ts_val is not None
            self.counters["flows_tracked"] += 1
        if seg.payload_len > 0:
            entry.last_seq_sent = wrap(seg.seq + seg.payload_len)
            entry.active_time = now

    # -- Incoming packet event handler -------------------------------------

    def on_incoming(self, seg: Segment) -> Disposition:
        if not self.cfg.enabled:
            return Disposition.PASS
        entry = self.table.lookup(seg.reverse_key())
        if entry is None or not entry.active:
            return Disposition.PASS  # unknown flow: fail open
        if entry.long_lived:
            return Disposition.PASS  # large flows bypass the shim entirely
        if not seg.is_ack:
            return Disposition.PASS
        now = self.clock()
        disposition = Disposition.PASS

        if _new_ack(seg.ack, entry.last_ack_no):
            entry.last_ack_no = seg.ack
            if seg.ts_ecr:
                self._rtt_sample(entry, now - seg.ts_ecr)
            entry.dup_ack_nr = 0
            entry.ack_time = now
            entry.resent = 0
            entry.x = 2
            gamma = self.cfg.gamma
            if gamma is not None and entry.cumulative_acked() >= gamma:
                entry.long_lived = True
                self.counters["flows_marked_long_lived"] += 1
        elif seg.ack == entry.last_ack_no and seg.payload_len == 0:
            entry.dup_ack_nr += 1
            if entry.resent > 0:
                self.counters["dupacks_dropped"] += 1
                disposition = Disposition.DROP

        if disposition != Disposition.DROP:
            entry.ack_seq_field = seg.seq
            if seg.ts_val is not None:
                if seg.ts_val < entry.ts_recent:
                    # keep the sender's PAWS check satisfied after spoofs
                    seg.ts_val = entry.ts_recent
                    disposition = Disposition.PASS_REWRITTEN
                else:
                    entry.ts_recent = seg.ts_val
                if seg.ts_ecr:
                    entry.ts_ecr_recent = seg.ts_ecr
        return disposition

    def _rtt_sample(self, entry, sample):
        if sample <= 0:
            sample = 1
        if entry.rtt_est == 0:
            entry.rtt_est = sample
        else:
            entry.rtt_est = (7 * entry.rtt_est + sample) // 8

    # -- Timeout handler ----------------------------------------------------

    def on_tick(self):
        """Walk the table; returns the spoofed ACKs to inject, in order."""
        if not self.cfg.enabled:
            return []
        cfg = self.cfg
        now = self.clock()
        spoofs = []
        for entry in list(self.table.values()):
            if not entry.active or entry.long_lived:
                continue
            rtt = entry.rtt_est or cfg.default_rtt_us
            beta = cfg.alpha * rtt + self.jitter.random() * rtt
            t_ref = max(entry.ack_time, entry.active_time)
            if entry.resent == 0:
                if now - t_ref >= beta:
                    burst = cfg.phi - entry.dup_ack_nr
                    if burst > 0:
                        for _ in range(burst):
                            spoofs.append(self.build_spoofed_ack(entry))
                        entry.resent_time = now
                        entry.x = 2
                        entry.resent = 1
                        self.counters["episodes_opened"] += 1
                        self.counters["spoofed_acks_sent"] += burst
                    continue
            elif now - entry.resent_time >= beta * (1 << entry.x):
                spoofs.append(self.build_spoofed_ack(entry))
                entry.x += 1
                entry.resent += 1
                self.counters["spoofed_acks_sent"] += 1
                continue
            if now - entry.ack_time >= cfg.rto_min_us:
                if entry.resent > 0:
                    self.counters["episodes_stopped_at_rtomin"] += 1
                entry.resent = 0
                entry.x = 2
                # restart the observation window: recovery now belongs to the
                # sender's own RTO, and an idle entry must be able to age out
                entry.ack_time = now
                continue
            if now - entry.active_time >= cfg.inactivity_timeout_us:
                self.table.release(entry.key)
        return spoofs

    # -- Spoof construction ---------------------------------------------------

    def build_spoofed_ack(self, entry: FlowEntry) -> Segment:
        src, dst, sport, dport = entry.key
        blocks = ()
        if entry.sack_seen:
            left = wrap(entry.last_ack_no + FAKE_SACK_GAP)
            blocks = ((left, wrap(left + FAKE_SACK_BYTES)),)
        seg = Segment(dst, src, dport, sport,
                      seq=entry.ack_seq_field, ack=entry.last_ack_no,
                      is_ack=True,
                      ts_val=entry.ts_recent if entry.tstamp_seen else None,
                      ts_ecr=entry.ts_ecr_recent if entry.tstamp_seen else None,
                      sack_blocks=blocks)
        seg.spoofed = True
        return seg

    def deactivate(self, key):
        """Connection closed: stop tracking (called from the host)."""
        self.table.release(key)
