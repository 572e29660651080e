"""Run configuration: a flat, typed key=value format plus CLI overrides.

Every field has a default; the config digest embedded in run outputs covers
all simulation-relevant fields so paired and swept runs are attributable.
Files may `include` other files (relative to the including file); later keys
override earlier ones, and CLI flags override files.
"""

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigFileError(ValueError):
    pass


@dataclass
class RunConfig:
    # scenario
    scenario: str = "case1"          # case1 | case2 | poisson
    topology: str = ""               # dumbbell | leafspine ('' = by scenario)
    flows: int = 20                  # dumbbell sender count (one small flow each per round)
    duration_s: float = 15.0
    seed: int = 1
    # tcp
    tcp: str = "newreno"             # newreno | newreno-ecn | dctcp
    sack: bool = True
    timestamps: bool = True
    phi: int = 3
    init_cwnd: float = 10.0
    rto_min_us: int = 200_000
    # aqm
    aqm: str = "droptail"            # droptail | droprand | red-ecn | dctcp
    red_min_th: float = 20.0
    red_max_th: float = 80.0
    red_max_p: float = 0.1
    red_wq: float = 0.002
    dctcp_k: int = 0                 # 0 = pick by link speed
    # shim
    shim: bool = False
    alpha: int = 10
    gamma: int = 0                   # bytes; 0 = infinite (track everything)
    tick_us: int = 1_000
    inactivity_timeout_us: int = 1_000_000
    shim_table_size: int = 4096
    # dumbbell
    link_bps: int = 1_000_000_000
    buffer_pkts: int = 100
    rtt_us: int = 100
    # leaf-spine
    n_leaf: int = 9
    n_spine: int = 4
    hosts_per_leaf: int = 4
    oversub: int = 5
    hop_delay_us: int = 50
    host_bps: int = 10_000_000_000
    # poisson workload
    load: float = 0.7
    workload: str = "websearch"      # websearch | datamining | educational | privatedc
    pattern: str = "all_to_all"      # all_to_all | one_to_all
    # fault injection (oracle scenarios)
    drop_rule: str = "none"          # none | tail | head
    drop_head_min_cwnd: float = 8.0
    # diagnostics
    trace_cwnd: bool = False

    def resolve(self):
        if not self.topology:
            self.topology = "leafspine" if self.scenario == "poisson" else "dumbbell"
        return self

    def validate(self):
        checks = [
            (self.scenario in ("case1", "case2", "poisson"), "scenario"),
            (self.topology in ("dumbbell", "leafspine"), "topology"),
            (self.tcp in ("newreno", "newreno-ecn", "dctcp"), "tcp"),
            (self.aqm in ("droptail", "droprand", "red-ecn", "dctcp"), "aqm"),
            (self.pattern in ("all_to_all", "one_to_all"), "pattern"),
            (self.workload in ("websearch", "datamining", "educational",
                               "privatedc"), "workload"),
            (self.drop_rule in ("none", "tail", "head"), "drop_rule"),
            (self.flows > 0 or self.scenario == "poisson", "flows"),
            (self.duration_s > 0, "duration_s"),
            (self.alpha >= 1, "alpha"),
            (self.phi >= 1, "phi"),
            (self.gamma >= 0, "gamma"),
            (0.0 < self.load < 1.0 or self.scenario != "poisson", "load"),
            (self.tick_us >= 1, "tick_us"),
        ]
        for ok, name in checks:
            if not ok:
                raise ConfigFileError(
                    f"invalid value for '{name}': {getattr(self, name)!r}")
        return self

    @property
    def gamma_or_none(self):
        return None if self.gamma == 0 else self.gamma

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self):
        blob = ";".join(f"{k}={v}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True,
               "0": False, "false": False, "no": False, "off": False}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, raw, where):
    ftype = _FIELD_TYPES.get(name)
    if ftype is None:
        raise ConfigFileError(f"{where}: unknown config key '{name}'")
    raw = raw.strip()
    try:
        if ftype is bool:
            return _BOOL_WORDS[raw.lower()]
        if ftype is int:
            if name == "gamma" and raw.lower() in ("inf", "infinite"):
                return 0
            return int(raw.replace("_", ""))
        if ftype is float:
            return float(raw)
        return raw
    except (KeyError, ValueError):
        raise ConfigFileError(f"{where}: bad value {raw!r} for '{name}'") from None


def parse_config_text(text, base: RunConfig | None = None, origin="<config>",
                      _depth=0):
    cfg_dict = base.as_dict() if base else RunConfig().as_dict()
    for ln, raw in enumerate(text.splitlines(), 1):
        where = f"{origin}:{ln}"
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            inc = line[len("include "):].strip()
            inc_path = (Path(origin).parent / inc
                        if origin != "<config>" else Path(inc))
            sub = load_config_file(inc_path, _depth=_depth + 1)
            cfg_dict.update(sub.as_dict())
            continue
        if "=" not in line:
            raise ConfigFileError(f"{where}: expected 'key = value'")
        name, raw_val = line.split("=", 1)
        name = name.strip()
        cfg_dict[name] = _coerce(name, raw_val, where)
    return RunConfig(**cfg_dict)


def load_config_file(path, _depth=0) -> RunConfig:
    if _depth > 8:
        raise ConfigFileError(f"{path}: include depth limit exceeded")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, origin=str(path), _depth=_depth)


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """pairs: iterable of 'key=value' strings (CLI --set or flag shorthand)."""
    d = cfg.as_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigFileError(f"override '{pair}' is not key=value")
        name, raw = pair.split("=", 1)
        d[name.strip()] = _coerce(name.strip(), raw, f"--set {pair}")
    return RunConfig(**d)
