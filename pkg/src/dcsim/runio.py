"""Run output files: flow/recovery CSVs, shim counter summary, metadata sidecar.

All files are written to a temp name and renamed into place, so a crashed run
never leaves a half-written CSV that parses.
"""

import os
from pathlib import Path

from .metrics import (fct_percentiles, mean_fct, deadline_misses,
                      per_round_mean_fct, write_flow_csv, write_recovery_csv)

FLOWS_CSV = "flows.csv"
RECOVERY_CSV = "recovery.csv"
SHIM_TXT = "shim_counters.txt"
META_TXT = "run_meta.txt"


class OutputCollision(RuntimeError):
    pass


def _atomic_write(path: Path, writer):
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text):
    _atomic_write(path, lambda p: p.write_text(text))


def write_outputs(result, out_dir, overwrite=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    existing = [n for n in (FLOWS_CSV, RECOVERY_CSV, SHIM_TXT, META_TXT)
                if (out / n).exists()]
    if existing and not overwrite:
        raise OutputCollision(
            f"{out} already holds {', '.join(existing)}; pass --overwrite")
    _atomic_write(out / FLOWS_CSV, lambda p: write_flow_csv(p, result.records))
    _atomic_write(out / RECOVERY_CSV,
                  lambda p: write_recovery_csv(p, result.recovery))
    shim_lines = [f"{k}={v}" for k, v in sorted(result.shim_counters.items())]
    _atomic_write_text(out / SHIM_TXT, "\n".join(shim_lines) + "\n")
    meta_lines = [f"{k}={v}" for k, v in sorted(result.meta.items())]
    _atomic_write_text(out / META_TXT, "\n".join(meta_lines) + "\n")
    return out


def read_meta(out_dir):
    meta = {}
    for raw in (Path(out_dir) / META_TXT).read_text().splitlines():
        if "=" in raw:
            k, v = raw.split("=", 1)
            meta[k] = v
    return meta


def summarize(records):
    """Per-class rows: (class, n, completed, mean_fct_us, p95_fct_us,
    rto_events, deadline_misses)."""
    rows = []
    for cls in ("small", "medium", "large", "all"):
        subset = [r for r in records if cls == "all" or r.size_class == cls]
        if not subset:
            continue
        p95 = fct_percentiles(subset, percentiles=(95,))
        rows.append({
            "class": cls,
            "n": len(subset),
            "completed": sum(1 for r in subset if r.completed),
            "mean_fct_us": mean_fct(subset),
            "p95_fct_us": p95[0][1] if p95 else None,
            "rto_events": sum(r.rto_events for r in subset),
            "deadline_misses": deadline_misses(subset),
        })
    return rows


def format_summary(records, title=""):
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'class':>8} {'n':>6} {'done':>6} {'mean_fct_ms':>12} "
                 f"{'p95_fct_ms':>11} {'rtos':>6} {'misses':>7}")
    for row in summarize(records):
        mean_ms = ("-" if row["mean_fct_us"] is None
                   else f"{row['mean_fct_us'] / 1000:.2f}")
        p95_ms = ("-" if row["p95_fct_us"] is None
                  else f"{row['p95_fct_us'] / 1000:.2f}")
        lines.append(f"{row['class']:>8} {row['n']:>6} {row['completed']:>6} "
                     f"{mean_ms:>12} {p95_ms:>11} {row['rto_events']:>6} "
                     f"{row['deadline_misses']:>7}")
    rounds = per_round_mean_fct(records)
    if len(rounds) > 1:
        per_round = "  ".join(f"r{k}={v / 1000:.2f}ms" for k, v in rounds.items())
        lines.append(f"per-round mean small FCT: {per_round}")
    return "\n".join(lines)
