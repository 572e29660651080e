"""Flow arrival and size generation.

Incast rounds on the dumbbell (clusters of small flows every few seconds),
and CDF-driven Poisson arrivals on the leaf-spine fabric. All generation is
seeded and happens before the simulation starts, so the flow schedule is a
pure function of the seed: paired runs that differ only in shim/TCP/AQM
settings replay the exact same arrivals.
"""

import math
from importlib import resources
from typing import NamedTuple

SMALL_MAX_BYTES = 100_000
MEDIUM_MAX_BYTES = 10_000_000

INCAST_FLOW_BYTES = 14_600        # 10 full segments
INCAST_PERIOD_US = 3_000_000


class FlowSpec(NamedTuple):
    flow_id: int
    src: int
    dst: int
    size_bytes: int
    start_us: int


def classify_size(nbytes: int) -> str:
    if nbytes < 0:
        raise ValueError("negative flow size")
    if nbytes <= SMALL_MAX_BYTES:
        return "small"
    if nbytes <= MEDIUM_MAX_BYTES:
        return "medium"
    return "large"


class FlowSizeCdf:
    """Piecewise-linear flow-size CDF sampled by inverse transform."""

    def __init__(self, points):
        if len(points) < 2:
            raise ValueError("CDF needs at least two breakpoints")
        last_s, last_p = None, None
        for s, p in points:
            if s <= 0:
                raise ValueError(f"non-positive size breakpoint {s}")
            if last_s is not None and (s <= last_s or p <= last_p):
                raise ValueError("CDF breakpoints must be strictly increasing")
            last_s, last_p = s, p
        if points[0][1] < 0 or abs(points[-1][1] - 1.0) > 1e-12:
            raise ValueError("CDF must start >= 0 and end exactly at 1.0")
        self.points = [(float(s), float(p)) for s, p in points]

    @classmethod
    def from_text(cls, text):
        pts = []
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {ln}: expected '<size_bytes> <cum_prob>'")
            pts.append((float(parts[0]), float(parts[1])))
        return cls(pts)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    @classmethod
    def builtin(cls, name):
        data = resources.files("dcsim.data").joinpath(f"{name}.cdf").read_text()
        return cls.from_text(data)

    def sample(self, rng) -> int:
        u = rng.random()
        pts = self.points
        if u <= pts[0][1]:
            return max(1, int(round(pts[0][0])))
        if u >= pts[-1][1]:
            return max(1, int(round(pts[-1][0])))
        lo, hi = 0, len(pts) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if pts[mid][1] < u:
                lo = mid
            else:
                hi = mid
        s0, p0 = pts[lo]
        s1, p1 = pts[hi]
        size = s0 + (s1 - s0) * (u - p0) / (p1 - p0)
        return max(1, int(round(size)))

    def mean(self) -> float:
        """Analytic mean of the piecewise-linear distribution."""
        pts = self.points
        total = pts[0][0] * pts[0][1]  # mass at/below the first breakpoint
        for (s0, p0), (s1, p1) in zip(pts, pts[1:]):
            total += (p1 - p0) * (s0 + s1) / 2.0
        return total


def gen_incast_round(n_flows, round_index, pkt_tx_us, receiver,
                     arrivals_rng, shuffle_rng, base_flow_id=0,
                     flow_bytes=INCAST_FLOW_BYTES, period_us=INCAST_PERIOD_US):
    """One synchronized burst: every sender starts one small flow within an
    i.i.d. exponential offset (mean = one packet transmission time) of the
    round epoch, so the whole round lands almost simultaneously."""
    senders = list(range(n_flows))
    shuffle_rng.shuffle(senders)
    t0 = round_index * period_us
    flows = []
    for i, src in enumerate(senders):
        offset = arrivals_rng.expovariate(1.0 / pkt_tx_us)
        flows.append(FlowSpec(base_flow_id + i, src, receiver,
                              flow_bytes, t0 + int(offset)))
    return sorted(flows, key=lambda f: (f.start_us, f.flow_id))


def gen_case1(n_flows, duration_us, pkt_tx_us, receiver, arrivals_rng,
              shuffle_rng):
    flows = []
    rounds = -(-duration_us // INCAST_PERIOD_US)  # every period start in the run
    for r in range(rounds):
        flows.extend(gen_incast_round(n_flows, r, pkt_tx_us, receiver,
                                      arrivals_rng, shuffle_rng,
                                      base_flow_id=len(flows)))
    return flows


def gen_case2(n_flows, duration_us, pkt_tx_us, receiver, bottleneck_bps,
              arrivals_rng, shuffle_rng):
    """CASE 1 plus ceil(n/3) persistent large flows active the whole run."""
    flows = gen_case1(n_flows, duration_us, pkt_tx_us, receiver,
                      arrivals_rng, shuffle_rng)
    n_large = math.ceil(n_flows / 3)
    large_sources = shuffle_rng.sample(range(n_flows), n_large)
    # sized to outlast the run even with the bottleneck to itself
    large_bytes = (bottleneck_bps // 8) * (duration_us // 1_000_000 + 1) * 2
    next_id = len(flows)
    for i, src in enumerate(large_sources):
        flows.append(FlowSpec(next_id + i, src, receiver, large_bytes, 0))
    return sorted(flows, key=lambda f: (f.start_us, f.flow_id))


def gen_poisson_flows(load, cdf: FlowSizeCdf, n_hosts, capacity_bps,
                      duration_us, pattern, arrivals_rng, sizes_rng,
                      pick_rng, hosts_per_leaf=None):
    """Poisson arrivals at rate load * capacity / mean flow size."""
    if not 0.0 < load < 1.0:
        raise ValueError(f"load must be in (0,1), got {load}")
    mean_bits = cdf.mean() * 8.0
    if mean_bits <= 0:
        raise ValueError("degenerate CDF: zero mean flow size")
    lam_per_us = load * capacity_bps / mean_bits / 1e6
    if pattern == "one_to_all":
        if not hosts_per_leaf:
            raise ValueError("one_to_all needs hosts_per_leaf")
        clients = list(range(hosts_per_leaf))          # the first rack
        servers = list(range(hosts_per_leaf, n_hosts))
    elif pattern == "all_to_all":
        clients = servers = list(range(n_hosts))
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    flows = []
    t = 0.0
    fid = 0
    while True:
        t += arrivals_rng.expovariate(lam_per_us)
        if t >= duration_us:
            break
        src = pick_rng.choice(clients)
        dst = pick_rng.choice(servers)
        while dst == src:
            dst = pick_rng.choice(servers)
        flows.append(FlowSpec(fid, src, dst, cdf.sample(sizes_rng), int(t)))
        fid += 1
    return flows
