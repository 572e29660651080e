"""Per-flow outcome records, FCT statistics, recovery-event classification,
and the fluid throughput model.

CSV formats are fixed (see FLOW_HEADER / RECOVERY_HEADER); truncated flows
(still running at the end of a run) are flagged by empty end/fct fields.
"""

import csv
import math
from dataclasses import dataclass

from .workload import classify_size

DEADLINE_US = 200_000

FLOW_HEADER = ("flow_id,src,dst,size_bytes,class,start_us,end_us,fct_us,"
               "rto_events,frr_events,rack_assisted_frr_events,"
               "spoofed_acks_received,deadline_missed")
RECOVERY_HEADER = ("flow_id,kind,cwnd_mss,loss_index_fraction,burst_fraction,"
                   "recovery_duration_us")


@dataclass
class FlowRecord:
    flow_id: int
    src: int
    dst: int
    size_bytes: int
    size_class: str
    start_us: int
    end_us: int | None           # None while truncated at run end
    rto_events: int = 0
    frr_events: int = 0
    rack_assisted_frr_events: int = 0
    spoofed_acks_received: int = 0

    @property
    def completed(self):
        return self.end_us is not None

    @property
    def fct_us(self):
        return self.end_us - self.start_us if self.completed else None

    @property
    def deadline_missed(self):
        if self.size_class != "small":
            return False
        elapsed = self.fct_us
        if elapsed is None:
            return False
        return elapsed > DEADLINE_US


@dataclass
class RecoveryEvent:
    flow_id: int
    kind: str                    # "frr" | "rto"
    cwnd_mss: float
    loss_index_fraction: float
    burst_fraction: float
    recovery_duration_us: int


class DuplicateFlowError(RuntimeError):
    """Two records for one flow id: an event-accounting bug, not a data issue."""


class Collector:
    def __init__(self):
        self.flows: dict[int, FlowRecord] = {}
        self.recovery: list[RecoveryEvent] = []

    def record_flow(self, record: FlowRecord):
        if record.flow_id in self.flows:
            raise DuplicateFlowError(f"flow {record.flow_id} recorded twice")
        self.flows[record.flow_id] = record

    def record_recovery(self, event: RecoveryEvent):
        self.recovery.append(event)

    def records(self):
        return [self.flows[k] for k in sorted(self.flows)]


def fct_percentiles(records, class_filter=None, percentiles=(50, 95, 99)):
    """Nearest-rank percentiles of FCT over completed flows."""
    values = sorted(r.fct_us for r in records
                    if r.completed and (class_filter is None
                                        or r.size_class == class_filter))
    if not values:
        return []
    n = len(values)
    out = []
    for p in percentiles:
        rank = max(1, math.ceil(p / 100.0 * n))
        out.append((p, values[min(rank, n) - 1]))
    return out


def mean_fct(records, class_filter=None):
    values = [r.fct_us for r in records
              if r.completed and (class_filter is None
                                  or r.size_class == class_filter)]
    return sum(values) / len(values) if values else None


def deadline_misses(records):
    return sum(1 for r in records if r.deadline_missed)


def per_round_mean_fct(records, period_us=3_000_000, class_filter="small"):
    """Mean FCT per incast round (rounds are period_us buckets of start time)."""
    buckets = {}
    for r in records:
        if not r.completed or (class_filter and r.size_class != class_filter):
            continue
        buckets.setdefault(r.start_us // period_us, []).append(r.fct_us)
    return {k: sum(v) / len(v) for k, v in sorted(buckets.items())}


def classify_recovery(events):
    """Bin recovery events the way the kernel-probe analysis does: 10%-wide
    bins of loss position and of burst size, separately per recovery kind,
    plus the window-size distribution per kind."""
    hists = {"frr": {"loss_index": [0] * 10, "burst": [0] * 10},
             "rto": {"loss_index": [0] * 10, "burst": [0] * 10}}
    cwnds = {"frr": [], "rto": []}

    def bin10(frac):
        # (0.0,0.1] -> 0 ... (0.9,1.0] -> 9; exact zero lands in the first bin
        return min(9, max(0, math.ceil(frac * 10) - 1))

    for ev in events:
        hists[ev.kind]["loss_index"][bin10(ev.loss_index_fraction)] += 1
        hists[ev.kind]["burst"][bin10(ev.burst_fraction)] += 1
        cwnds[ev.kind].append(ev.cwnd_mss)
    out = {}
    for kind in ("frr", "rto"):
        total = sum(hists[kind]["loss_index"])
        out[kind] = {
            "count": total,
            "loss_index": [c / total if total else 0.0
                           for c in hists[kind]["loss_index"]],
            "burst": [c / total if total else 0.0
                      for c in hists[kind]["burst"]],
            "cwnd_sorted": sorted(cwnds[kind]),
        }
    return out


def fluid_throughput(B, N, C, n, tau, rto, n_prime, tau_prime):
    """Ideal and timeout-afflicted throughput of one of N flows sharing C.

    B is the flow size in bits, n/tau the round count and per-round delay of
    the loss-free transfer, n'/tau' the same under recovery, rto the total
    timeout wait in seconds. Returns (ideal_bps, actual_bps).
    """
    if C <= 0:
        raise ValueError("capacity must be positive")
    for name, v in (("B", B), ("N", N), ("n", n), ("tau", tau),
                    ("n_prime", n_prime), ("tau_prime", tau_prime)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if rto < 0:
        raise ValueError("rto must be >= 0")
    if n_prime < n or tau_prime < tau:
        raise ValueError("recovery path cannot be shorter than the ideal one")
    rho_star = B / (n * tau + B * N / C)
    rho = B / (rto + n_prime * tau_prime + B * N / C)
    return rho_star, rho


# -- CSV I/O -----------------------------------------------------------------


def write_flow_csv(path, records):
    with open(path, "w", newline="") as fh:
        fh.write(FLOW_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for r in records:
            w.writerow([
                r.flow_id, r.src, r.dst, r.size_bytes, r.size_class,
                r.start_us,
                "" if r.end_us is None else r.end_us,
                "" if r.fct_us is None else r.fct_us,
                r.rto_events, r.frr_events, r.rack_assisted_frr_events,
                r.spoofed_acks_received,
                int(r.deadline_missed),
            ])


def read_flow_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FLOW_HEADER.split(","):
            raise ValueError(f"{path}: unexpected flow CSV header")
        for row in reader:
            rec = FlowRecord(
                flow_id=int(row["flow_id"]), src=int(row["src"]),
                dst=int(row["dst"]), size_bytes=int(row["size_bytes"]),
                size_class=row["class"], start_us=int(row["start_us"]),
                end_us=int(row["end_us"]) if row["end_us"] else None,
                rto_events=int(row["rto_events"]),
                frr_events=int(row["frr_events"]),
                rack_assisted_frr_events=int(row["rack_assisted_frr_events"]),
                spoofed_acks_received=int(row["spoofed_acks_received"]))
            records.append(rec)
    return records


def write_recovery_csv(path, events):
    with open(path, "w", newline="") as fh:
        fh.write(RECOVERY_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for ev in events:
            w.writerow([ev.flow_id, ev.kind, repr(ev.cwnd_mss),
                        repr(ev.loss_index_fraction), repr(ev.burst_fraction),
                        ev.recovery_duration_us])


def read_recovery_csv(path):
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECOVERY_HEADER.split(","):
            raise ValueError(f"{path}: unexpected recovery CSV header")
        for row in reader:
            events.append(RecoveryEvent(
                flow_id=int(row["flow_id"]), kind=row["kind"],
                cwnd_mss=float(row["cwnd_mss"]),
                loss_index_fraction=float(row["loss_index_fraction"]),
                burst_fraction=float(row["burst_fraction"]),
                recovery_duration_us=int(row["recovery_duration_us"])))
    return events


def flow_record_from_sim(spec, sender):
    """Build the outcome row for one flow from its sender's final state."""
    end = sender.done_time_us
    return FlowRecord(
        flow_id=spec.flow_id, src=spec.src, dst=spec.dst,
        size_bytes=spec.size_bytes, size_class=classify_size(spec.size_bytes),
        start_us=spec.start_us, end_us=end,
        rto_events=sender.rto_events, frr_events=sender.frr_events,
        rack_assisted_frr_events=sender.rack_assisted_frr_events,
        spoofed_acks_received=sender.spoofed_acks_received)
