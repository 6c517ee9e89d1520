"""Result tables: CSV rows plus a Markdown "Obj. (Gap) & Time" rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

COLUMNS = ("method", "task", "obj", "gap", "time_s", "count", "config_hash")


@dataclass
class ResultRow:
    method: str
    task: str
    obj: float | None
    gap: float | None
    time_s: float
    count: int
    config_hash: str = ""


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        rec = asdict(r)
        rec["obj"] = "" if r.obj is None else f"{r.obj:.6f}"
        rec["gap"] = "" if r.gap is None else f"{r.gap:.6f}"
        rec["time_s"] = f"{r.time_s:.3f}"
        w.writerow(rec)
    return buf.getvalue()


def _fmt_time(sec: float) -> str:
    if sec < 60:
        return f"{sec:.1f}s"
    if sec < 3600:
        return f"{sec / 60:.1f}m"
    return f"{sec / 3600:.1f}h"


def to_markdown(rows, config_hash: str = "") -> str:
    """One column group per task, one row per method, cells ``obj (gap%)`` and time."""
    rows = list(rows)
    tasks = list(dict.fromkeys(r.task for r in rows))
    methods = list(dict.fromkeys(r.method for r in rows))
    cell = {(r.method, r.task): r for r in rows}
    if not rows:
        return "| Method | Obj. (Gap) | Time |\n|---|---|---|\n" + (
            f"\nconfig hash: `{config_hash}`\n" if config_hash else "")
    head = "| Method | " + " | ".join(f"{t} Obj. (Gap) | {t} Time" for t in tasks) + " |"
    sep = "|---|" + "---|---|" * len(tasks)
    lines = [head, sep]
    for m in methods:
        parts = []
        for t in tasks:
            r = cell.get((m, t))
            if r is None:
                parts += ["", ""]
                continue
            obj = "" if r.obj is None else f"{r.obj:.4f}"
            gap = "" if r.gap is None else f" ({100 * r.gap:.2f}%)"
            parts += [obj + gap, _fmt_time(r.time_s)]
        lines.append(f"| {m} | " + " | ".join(parts) + " |")
    if config_hash:
        lines.append("")
        lines.append(f"config hash: `{config_hash}`")
    return "\n".join(lines) + "\n"
