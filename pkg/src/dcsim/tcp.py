"""Per-connection TCP sender and receiver state machines.

Sender implements NewReno slow start / congestion avoidance / fast
retransmit+recovery with RFC 6298-style RTO estimation under a 200 ms floor,
plus optional ECN halving and DCTCP fraction-based reaction. The receiver
generates cumulative ACKs, duplicate ACKs for out-of-order data and optional
SACK blocks and timestamp echoes.

Sequence numbers are 32-bit modular on the wire; endpoints keep absolute
64-bit counters internally and unwrap wire values against their own state.
"""

from dataclasses import dataclass, field

SEQ_MASK = 0xFFFFFFFF
SEQ_HALF = 1 << 31

MSS = 1460
BASE_HDR_BYTES = 40        # TCP + IP, no options
TS_OPT_BYTES = 12
SACK_OPT_BASE = 4


def wrap(seq):
    return seq & SEQ_MASK


def seq_unwrap(wire, ref):
    """Absolute value congruent to `wire` (mod 2^32) nearest to absolute `ref`."""
    delta = (wire - ref) & SEQ_MASK
    if delta >= SEQ_HALF:
        delta -= SEQ_HALF << 1
    return ref + delta


class Segment:
    """A simulated TCP/IP packet; header fields only, no payload bytes."""

    __slots__ = ("src", "dst", "sport", "dport", "seq", "ack", "syn", "fin",
                 "is_ack", "payload_len", "ece", "cwr", "ce", "ect",
                 "ts_val", "ts_ecr", "sack_blocks", "sack_ok", "spoofed",
                 "retx", "is_last", "win_off", "cwnd_at_tx", "win_start_at_tx")

    def __init__(self, src, dst, sport, dport, seq=0, ack=0, syn=False,
                 fin=False, is_ack=False, payload_len=0, ece=False, cwr=False,
                 ce=False, ect=False, ts_val=None, ts_ecr=None,
                 sack_blocks=()):
        self.src = src
        self.dst = dst
        self.sport = sport
        self.dport = dport
        self.seq = seq
        self.ack = ack
        self.syn = syn
        self.fin = fin
        self.is_ack = is_ack
        self.payload_len = payload_len
        self.ece = ece
        self.cwr = cwr
        self.ce = ce
        self.ect = ect
        self.ts_val = ts_val
        self.ts_ecr = ts_ecr
        self.sack_blocks = sack_blocks
        self.sack_ok = False
        self.spoofed = False
        self.retx = False
        self.is_last = False
        self.win_off = 0
        self.cwnd_at_tx = 0.0
        self.win_start_at_tx = 0

    def flow_key(self):
        return (self.src, self.dst, self.sport, self.dport)

    def reverse_key(self):
        return (self.dst, self.src, self.dport, self.sport)

    def wire_bytes(self):
        n = BASE_HDR_BYTES + self.payload_len
        if self.ts_val is not None:
            n += TS_OPT_BYTES
        if self.sack_blocks:
            n += SACK_OPT_BASE + 8 * len(self.sack_blocks)
        return n

    def __repr__(self):
        kind = "SYN" if self.syn else ("DATA" if self.payload_len else "ACK")
        return (f"<{kind} {self.src}:{self.sport}->{self.dst}:{self.dport} "
                f"seq={self.seq} ack={self.ack} len={self.payload_len}>")


@dataclass
class TcpConfig:
    variant: str = "newreno"      # newreno | newreno-ecn | dctcp
    mss: int = MSS
    init_cwnd_mss: float = 10.0
    init_ssthresh_mss: float = 1 << 20
    phi: int = 3                  # dupACK threshold
    rto_min_us: int = 200_000
    rto_max_us: int = 60_000_000
    sack: bool = True
    timestamps: bool = True
    delayed_ack: bool = False
    delack_cap_us: int = 40_000
    dctcp_g: float = 1.0 / 16.0
    trace_cwnd: bool = False

    @property
    def ecn(self):
        return self.variant in ("newreno-ecn", "dctcp")


@dataclass
class _SegMeta:
    length: int
    last_tx_us: int
    retransmitted: bool
    orig_cwnd: float
    orig_win_start: int


@dataclass
class _Episode:
    kind: str                    # "frr" | "rto"
    trigger_time_us: int
    stall_start_us: int
    cwnd_at_loss: float
    loss_index_fraction: float
    recover_point: int
    rack_assisted: bool
    retx_low: int = None
    retx_high: int = None

    def note_retx(self, seq, end):
        if self.retx_low is None or seq < self.retx_low:
            self.retx_low = seq
        if self.retx_high is None or end > self.retx_high:
            self.retx_high = end


class TcpSender:
    """Sending half of one flow. `host` supplies clock, transmission and timers."""

    def __init__(self, host, flow_id, key, size_bytes, cfg: TcpConfig, isn):
        self.host = host
        self.flow_id = flow_id
        self.key = key            # (src, dst, sport, dport)
        self.cfg = cfg
        self.isn = isn
        self.size_bytes = 0
        self.state = "idle"       # idle -> syn_sent -> established -> done
        self.snd_una = isn
        self.snd_nxt = isn
        self.buffer_end = isn + 1  # SYN occupies one sequence number
        self.cwnd = cfg.init_cwnd_mss
        self.ssthresh = cfg.init_ssthresh_mss
        self.dup_ack_count = 0
        self.in_recovery = False
        self.recovery_high = isn
        self.srtt = None
        self.rttvar = None
        self.rto = cfg.rto_min_us
        self.backoff = 0
        self.flight = {}          # seq -> _SegMeta, insertion-ordered
        self.flight_bytes = 0
        self.timer_gen = 0
        self.timer_armed = False
        self.timer_deadline = 0
        self.timer_pending = False
        self.timer_pending_at = 0
        self.peer_ts_recent = -1
        self.ack_field = 0        # rcv_nxt for the reverse direction
        self.cwr_pending = False
        self.ecn_react_until = isn
        # dctcp
        self.dctcp_alpha = 1.0
        self.dctcp_win_end = isn
        self.dctcp_acked = 0
        self.dctcp_ce_acked = 0
        # counters / instrumentation
        self.rto_events = 0
        self.frr_events = 0
        self.rack_assisted_frr_events = 0
        self.spoofed_acks_received = 0
        self.spoofed_dups_since_new = 0
        self.ignored_acks = 0
        self.paws_rejects = 0
        self.start_time_us = None
        self.done_time_us = None
        self.episode = None
        self.cwnd_log = []
        if size_bytes:
            self.app_send(size_bytes)

    # -- helpers ---------------------------------------------------------

    @property
    def now(self):
        return self.host.now

    def _cwnd_bytes(self):
        return int(self.cwnd * self.cfg.mss)

    def _log_cwnd(self):
        if self.cfg.trace_cwnd:
            self.cwnd_log.append((self.now, round(self.cwnd, 6)))

    def _set_cwnd(self, value):
        self.cwnd = max(1.0, value)
        self._log_cwnd()

    def _ts(self):
        return self.now if self.cfg.timestamps else None

    def _arm_rto(self):
        # lazy timer: the deadline moves freely, one event pends at a time
        self.timer_armed = True
        self.timer_deadline = self.now + self.rto
        if not self.timer_pending or self.timer_pending_at > self.timer_deadline:
            self.host.set_conn_timer(self, self.rto, self.timer_gen)
            self.timer_pending = True
            self.timer_pending_at = self.timer_deadline

    def _cancel_rto(self):
        self.timer_armed = False

    # -- app interface ---------------------------------------------------

    def app_send(self, nbytes):
        """Queue nbytes for transmission; starts the handshake on first use."""
        self.size_bytes += nbytes
        self.buffer_end += nbytes

    def start(self):
        self.start_time_us = self.now
        self.state = "syn_sent"
        self._send_syn()

    def _send_syn(self):
        seg = Segment(*self.key, seq=wrap(self.isn), syn=True,
                      ect=False, ts_val=self._ts(), ts_ecr=0)
        seg.sack_ok = self.cfg.sack
        self.host.transmit_from_sender(self, seg)
        self._arm_rto()

    # -- transmission ----------------------------------------------------

    def _make_data_seg(self, seq, length, retx=False):
        seg = Segment(*self.key, seq=wrap(seq), ack=wrap(self.ack_field),
                      is_ack=True, payload_len=length, ect=self.cfg.ecn,
                      ts_val=self._ts(), ts_ecr=self.peer_ts_recent
                      if self.peer_ts_recent >= 0 else None)
        if self.cwr_pending and not retx:
            seg.cwr = True
            self.cwr_pending = False
        seg.sack_ok = self.cfg.sack
        seg.retx = retx
        seg.is_last = seq + length == self.buffer_end
        seg.win_off = seq - self.snd_una
        seg.cwnd_at_tx = self.cwnd
        seg.win_start_at_tx = self.snd_una
        return seg

    def send_pending(self):
        """Transmit new segments while the congestion window allows."""
        if self.state != "established":
            return
        cfg = self.cfg
        while self.snd_nxt < self.buffer_end and self.flight_bytes < self._cwnd_bytes():
            length = min(cfg.mss, self.buffer_end - self.snd_nxt)
            meta = _SegMeta(length, self.now, False, self.cwnd, self.snd_una)
            self.flight[self.snd_nxt] = meta
            self.flight_bytes += length
            seg = self._make_data_seg(self.snd_nxt, length)
            self.snd_nxt += length
            if not self.timer_armed:
                self._arm_rto()
            self.host.transmit_from_sender(self, seg)

    def _retransmit(self, seq):
        meta = self.flight.get(seq)
        if meta is None:
            return
        meta.retransmitted = True
        meta.last_tx_us = self.now
        seg = self._make_data_seg(seq, meta.length, retx=True)
        if self.episode:
            self.episode.note_retx(seq, seq + meta.length)
        self._arm_rto()
        self.host.transmit_from_sender(self, seg)

    # -- loss episodes ----------------------------------------------------

    def _open_episode(self, kind, rack_assisted):
        meta = self.flight.get(self.snd_una)
        if meta is None:
            return
        win = max(meta.orig_cwnd * self.cfg.mss, 1.0)
        frac = (self.snd_una + meta.length - meta.orig_win_start) / win
        self.episode = _Episode(
            kind=kind, trigger_time_us=self.now, stall_start_us=meta.last_tx_us,
            cwnd_at_loss=meta.orig_cwnd,
            loss_index_fraction=min(max(frac, 0.0), 1.0),
            recover_point=self.snd_nxt, rack_assisted=rack_assisted)

    def _maybe_close_episode(self):
        ep = self.episode
        if ep and self.snd_una >= ep.recover_point:
            span = 0 if ep.retx_low is None else ep.retx_high - ep.retx_low
            win = max(ep.cwnd_at_loss * self.cfg.mss, 1.0)
            self.host.record_recovery(
                self, ep.kind, ep.cwnd_at_loss, ep.loss_index_fraction,
                min(span / win, 1.0), self.now - ep.stall_start_us,
                ep.rack_assisted)
            self.episode = None

    # -- RTT / RTO ---------------------------------------------------------

    def _rtt_sample(self, sample_us):
        if sample_us <= 0:
            sample_us = 1
        if self.srtt is None:
            self.srtt = float(sample_us)
            self.rttvar = sample_us / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample_us)
            self.srtt = 0.875 * self.srtt + 0.125 * sample_us
        self.backoff = 0
        self.rto = min(max(int(self.srtt + 4 * self.rttvar), self.cfg.rto_min_us),
                       self.cfg.rto_max_us)

    # -- incoming ----------------------------------------------------------

    def on_ack(self, seg: Segment):
        if self.state == "done":
            return
        if self.cfg.timestamps and seg.ts_val is not None:
            if seg.ts_val < self.peer_ts_recent:
                self.paws_rejects += 1
                return
            self.peer_ts_recent = seg.ts_val
        if seg.spoofed:
            self.spoofed_acks_received += 1
        if self.state == "syn_sent":
            if seg.syn and seg.is_ack and seq_unwrap(seg.ack, self.snd_una) == self.isn + 1:
                self.state = "established"
                self.snd_una = self.isn + 1
                self.snd_nxt = self.isn + 1
                self.ack_field = (seg.seq + 1) & SEQ_MASK
                if seg.ts_ecr:
                    self._rtt_sample(self.now - seg.ts_ecr)
                self._cancel_rto()
                self._log_cwnd()
                if self.size_bytes == 0:
                    self._complete()
                else:
                    self.send_pending()
            return
        if self.state != "established":
            return

        ack = seq_unwrap(seg.ack, self.snd_una)
        if ack > self.snd_nxt:
            self.ignored_acks += 1  # acks data never sent (malformed/spoof)
            return
        if ack > self.snd_una:
            self._on_new_ack(ack, seg)
        elif ack == self.snd_una and seg.payload_len == 0 and self.flight:
            self._on_dup_ack(seg)

    def _on_new_ack(self, ack, seg):
        cfg = self.cfg
        acked = ack - self.snd_una
        done = []
        for seq in self.flight:  # insertion order == sequence order
            if seq >= ack:
                break
            done.append(seq)
        for seq in done:
            meta = self.flight.pop(seq)
            self.flight_bytes -= meta.length
        self.snd_una = ack
        self.dup_ack_count = 0
        self.spoofed_dups_since_new = 0
        if cfg.timestamps and seg.ts_ecr:
            self._rtt_sample(self.now - seg.ts_ecr)

        if cfg.variant == "dctcp":
            self.dctcp_acked += acked
            if seg.ece:
                self.dctcp_ce_acked += acked
            if self.snd_una >= self.dctcp_win_end:
                self._dctcp_window_roll()
        elif cfg.variant == "newreno-ecn" and seg.ece:
            if self.snd_una >= self.ecn_react_until:
                self.ssthresh = max(self.cwnd / 2.0, 2.0)
                self._set_cwnd(self.ssthresh)
                self.ecn_react_until = self.snd_nxt
                self.cwr_pending = True

        if self.in_recovery:
            if ack >= self.recovery_high:
                self.in_recovery = False
                self._set_cwnd(self.ssthresh)
            else:
                # NewReno partial ACK: retransmit the next hole, deflate
                self._set_cwnd(max(self.cwnd - acked / cfg.mss + 1.0, 1.0))
                self._retransmit(self.snd_una)
        elif cfg.variant == "newreno-ecn" and self.snd_una < self.ecn_react_until:
            pass  # no growth for one RTT after an ECE-driven reduction
        else:
            if self.cwnd < self.ssthresh:
                self._set_cwnd(self.cwnd + 1.0)
            else:
                self._set_cwnd(self.cwnd + 1.0 / self.cwnd)

        self._maybe_close_episode()
        if self.flight:
            self._arm_rto()
        else:
            self._cancel_rto()
        if self.snd_una >= self.isn + 1 + self.size_bytes:
            self._complete()
        else:
            self.send_pending()

    def _on_dup_ack(self, seg):
        if self.cfg.sack and not seg.sack_blocks:
            return  # SACK flows ignore bare duplicates
        if seg.spoofed:
            self.spoofed_dups_since_new += 1
        self.dup_ack_count += 1
        if self.in_recovery:
            self._set_cwnd(self.cwnd + 1.0)  # artificial inflation
            self.send_pending()
            return
        if self.dup_ack_count == self.cfg.phi:
            rack = self.spoofed_dups_since_new > 0
            self.frr_events += 1
            if rack:
                self.rack_assisted_frr_events += 1
            if self.episode is None:
                self._open_episode("frr", rack)
            self.ssthresh = max(self.flight_bytes / (2.0 * self.cfg.mss), 2.0)
            self.in_recovery = True
            self.recovery_high = self.snd_nxt
            self._set_cwnd(self.ssthresh + 3.0)
            self._retransmit(self.snd_una)

    def _dctcp_window_roll(self):
        g = self.cfg.dctcp_g
        frac = (self.dctcp_ce_acked / self.dctcp_acked) if self.dctcp_acked else 0.0
        self.dctcp_alpha = (1.0 - g) * self.dctcp_alpha + g * frac
        if self.dctcp_ce_acked:
            self.ssthresh = max(self.cwnd * (1.0 - self.dctcp_alpha / 2.0), 2.0)
            self._set_cwnd(self.ssthresh)
        self.dctcp_acked = 0
        self.dctcp_ce_acked = 0
        self.dctcp_win_end = self.snd_nxt

    # -- timers -------------------------------------------------------------

    def on_timer(self, generation):
        self.timer_pending = False
        if not self.timer_armed or self.state == "done":
            return
        if self.now < self.timer_deadline:
            # deadline was pushed out since this event was scheduled
            self.host.set_conn_timer(self, self.timer_deadline - self.now,
                                     self.timer_gen)
            self.timer_pending = True
            self.timer_pending_at = self.timer_deadline
            return
        if self.state == "syn_sent":
            self.rto = min(self.rto * 2, self.cfg.rto_max_us)
            self.backoff += 1
            self._send_syn()
            return
        if not self.flight:
            self.timer_armed = False
            return
        self.on_rto()

    def on_rto(self):
        """Retransmission timeout: collapse to one segment, back off the timer."""
        self.rto_events += 1
        if self.episode is None:
            self._open_episode("rto", False)
        else:
            self.episode.kind = "rto"
            self.episode.recover_point = max(self.episode.recover_point, self.snd_nxt)
        self.ssthresh = max(self.flight_bytes / (2.0 * self.cfg.mss), 2.0)
        self._set_cwnd(1.0)
        self.in_recovery = False
        self.dup_ack_count = 0
        self.rto = min(self.rto * 2, self.cfg.rto_max_us)
        self.backoff += 1
        self._retransmit(self.snd_una)

    def _complete(self):
        self.state = "done"
        self.done_time_us = self.now
        self._cancel_rto()
        self.host.flow_completed(self)


class _OooRanges:
    """Disjoint received-but-not-deliverable ranges, newest first for SACK."""

    def __init__(self):
        self.ranges = []   # list of [start, end), kept disjoint and sorted
        self.recent = []   # range starts by recency

    def add(self, start, end):
        merged = [start, end]
        out = []
        for r in self.ranges:
            if r[1] < merged[0] or r[0] > merged[1]:
                out.append(r)
            else:
                merged[0] = min(merged[0], r[0])
                merged[1] = max(merged[1], r[1])
        out.append(merged)
        out.sort()
        self.ranges = out
        self.recent = [merged[0]] + [s for s in self.recent if s != merged[0]]

    def pop_contiguous(self, rcv_nxt):
        while self.ranges and self.ranges[0][0] <= rcv_nxt:
            r = self.ranges.pop(0)
            rcv_nxt = max(rcv_nxt, r[1])
            self.recent = [s for s in self.recent if s != r[0]]
        return rcv_nxt

    def sack_blocks(self, limit=3):
        by_start = {r[0]: r for r in self.ranges}
        blocks = []
        for s in self.recent:
            r = by_start.get(s)
            if r:
                blocks.append((wrap(r[0]), wrap(r[1])))
            if len(blocks) == limit:
                break
        return tuple(blocks)


class TcpReceiver:
    """Receiving half of one flow; emits one ACK per arriving data segment."""

    def __init__(self, host, flow_id, key, cfg: TcpConfig, isn):
        self.host = host
        self.flow_id = flow_id
        self.key = key           # oriented receiver -> sender
        self.cfg = cfg
        self.my_isn = isn
        self.irs = None
        self.rcv_nxt = None
        self.ooo = _OooRanges()
        self.ts_recent = 0
        self.ece_latch = False
        self.established = False
        self.duplicate_bytes = 0

    @property
    def delivered_bytes(self):
        if self.rcv_nxt is None:
            return 0
        return self.rcv_nxt - self.irs - 1

    def _ack_seg(self, is_dup=False):
        blocks = ()
        if self.cfg.sack and (self.ooo.ranges or is_dup):
            blocks = self.ooo.sack_blocks()
        ece = False
        if self.cfg.variant == "newreno-ecn":
            ece = self.ece_latch
        seg = Segment(*self.key, seq=wrap(self.my_isn + 1), ack=wrap(self.rcv_nxt),
                      is_ack=True, ts_val=self.now_ts(), ts_ecr=self.ts_recent or None,
                      sack_blocks=blocks, ece=ece)
        return seg

    def now_ts(self):
        return self.host.now if self.cfg.timestamps else None

    def on_segment(self, seg: Segment):
        """Process an arriving SYN or data segment; returns the ACK to send."""
        if seg.syn:
            if self.irs is None:
                self.irs = seq_unwrap(seg.seq, self.my_isn)
                self.rcv_nxt = self.irs + 1
                self.established = True
            if seg.ts_val is not None:
                self.ts_recent = seg.ts_val
            synack = Segment(self.key[0], self.key[1], self.key[2], self.key[3],
                             seq=wrap(self.my_isn), ack=wrap(self.rcv_nxt),
                             syn=True, is_ack=True, ts_val=self.now_ts(),
                             ts_ecr=self.ts_recent or None)
            return synack
        if seg.payload_len == 0 or not self.established:
            return None  # pure ACKs carry nothing for a one-way receiver
        return self.on_data(seg)

    def on_data(self, seg: Segment):
        start = seq_unwrap(seg.seq, self.rcv_nxt)
        end = start + seg.payload_len

        if self.cfg.variant == "newreno-ecn":
            if seg.ce:
                self.ece_latch = True
            if seg.cwr:
                self.ece_latch = False

        if end <= self.rcv_nxt:
            self.duplicate_bytes += seg.payload_len
            ack = self._ack_seg(is_dup=True)
        elif start <= self.rcv_nxt:
            if seg.ts_val is not None:
                self.ts_recent = seg.ts_val
            self.rcv_nxt = end
            self.rcv_nxt = self.ooo.pop_contiguous(self.rcv_nxt)
            ack = self._ack_seg()
        else:
            self.ooo.add(start, end)
            ack = self._ack_seg(is_dup=True)
        if self.cfg.variant == "dctcp":
            ack.ece = seg.ce
        return ack
