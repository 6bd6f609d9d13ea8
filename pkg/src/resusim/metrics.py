"""No Flow accounting, message distributions and the Mann-Whitney arm comparison."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .comms import FipaCategory, Performative, fipa_category
from .domain import ContentCategory, IntegrityFault
from .kernels import mw_null_counts

EXACT_LIMIT = 16
ALPHA = 0.05
METRIC_KEYS = (
    "no_flow_seconds",
    "total_seconds",
    "error_events",
    "total_messages",
    "hung_directives",
    "failure_events",
)
# A 30:2 block, breaths included, keeps blood moving.
CPR_ACTIONS = frozenset({"chest_compressions_30", "ventilate_x2"})


class LogError(ValueError):
    def __init__(self, records):
        self.records = list(records)
        super().__init__(f"{len(self.records)} malformed record(s): {self.records[:3]}")


# ------------------------------------------------------------------ no flow
class NoFlowReader:
    """Rebuilds No Flow time from the event log alone.

    Feed events tick by tick; each call closes one tick and returns the
    second it contributes. CPR state comes from action events, the pulse
    from rhythm_change events.
    """

    def __init__(self, pulse: bool = False):
        self.pulse = pulse
        self.flowing = {}  # agent -> CPR action in progress
        self.last_tick = 0
        self.total = 0

    def _apply(self, e: dict) -> None:
        kind = e["event_type"]
        actor = e.get("actor")
        content = e.get("content") or {}
        if kind == "run_start" and "pulse" in content:
            self.pulse = bool(content["pulse"])
        elif kind == "rhythm_change":
            self.pulse = e.get("outcome") == "pulse"
        elif kind in ("action_start", "action_resume"):
            if content.get("action") in CPR_ACTIONS:
                self.flowing[actor] = content["action"]
            else:
                self.flowing.pop(actor, None)
        elif kind in ("action_end", "action_abort", "action_suspend"):
            self.flowing.pop(actor, None)

    def accumulate(self, tick: int, events: Sequence[dict]) -> int:
        """Close ``tick`` after applying its events; returns 0 or 1."""
        if tick <= self.last_tick and not (tick == 0 and self.last_tick == 0):
            raise IntegrityFault(f"tick {tick} after tick {self.last_tick}")
        for e in events:
            if e["tick"] != tick:
                raise IntegrityFault(f"event for tick {e['tick']} fed at tick {tick}")
            self._apply(e)
        self.last_tick = tick
        if tick == 0:
            return 0
        second = int(not self.pulse and not self.flowing)
        self.total += second
        return second

    def idle(self, until: int) -> int:
        """Close the event-free ticks last_tick+1 .. until."""
        k = until - self.last_tick
        if k < 0:
            raise IntegrityFault(f"tick {until} after tick {self.last_tick}")
        add = k if (not self.pulse and not self.flowing) else 0
        self.total += add
        self.last_tick = until
        return add


def accumulate_no_flow(reader: NoFlowReader, tick: int, events: Sequence[dict]) -> int:
    return reader.accumulate(tick, events)


def no_flow_from_log(events: Sequence[dict]) -> int:
    """Total No Flow seconds recomputed from a complete run log."""
    if not events:
        return 0
    reader = NoFlowReader()
    end = None
    i, n = 0, len(events)
    while i < n:
        tick = events[i]["tick"]
        j = i
        while j < n and events[j]["tick"] == tick:
            j += 1
        if tick > reader.last_tick + 1:
            reader.idle(tick - 1)
        reader.accumulate(tick, events[i:j])
        if events[j - 1]["event_type"] == "run_end":
            end = tick
        i = j
    if end is None:
        raise IntegrityFault("log has no run_end record")
    return reader.total


def structural_no_flow(events: Sequence[dict]) -> int:
    """Pulseless seconds the algorithm itself spends off the chest.

    Counts the ticks from each CprCycle exit (the rhythm check) up to the
    tick CPR is ordered again: the analysis, charge, shock and pulse-check
    windows. Ticks close the same way as in NoFlowReader.
    """
    total, pulse, off, last = 0, False, False, 0
    i, n = 0, len(events)
    while i < n:
        tick = events[i]["tick"]
        if off and not pulse:
            total += max(0, tick - last - 1)
        while i < n and events[i]["tick"] == tick:
            e = events[i]
            kind = e["event_type"]
            content = e.get("content") or {}
            if kind == "run_start":
                pulse = bool(content.get("pulse"))
            elif kind == "rhythm_change":
                pulse = e.get("outcome") == "pulse"
            elif kind == "phase":
                if content.get("from") == "CprCycle":
                    off = True
                if content.get("to") in ("CprCycle", "Terminated"):
                    off = False
            i += 1
        if tick > 0 and off and not pulse:
            total += 1
        last = tick
    return total


# ------------------------------------------------------------ distributions
def _percentages(counts: dict, total: int) -> dict:
    """Two-decimal percentages that sum to exactly 100 (largest remainder)."""
    if total == 0:
        return {k: 0.0 for k in counts}
    raw = {k: v * 10000 / total for k, v in counts.items()}
    floors = {k: math.floor(x) for k, x in raw.items()}
    short = 10000 - sum(floors.values())
    order = sorted(counts, key=lambda k: (-(raw[k] - floors[k]), list(counts).index(k)))
    for k in order[:short]:
        floors[k] += 1
    return {k: floors[k] / 100 for k in counts}


@dataclass
class DistributionReport:
    total: int
    performative_counts: dict
    performative_percent: dict
    fipa_percent: dict
    content_percent: dict
    fipa_counts: dict = field(default_factory=dict)
    content_counts: dict = field(default_factory=dict)

    def modal_performative(self) -> Optional[str]:
        if self.total == 0:
            return None
        return max(self.performative_counts, key=lambda p: self.performative_counts[p])

    def rows(self) -> list:
        out = []
        for block, counts, pct in (
            ("performative", self.performative_counts, self.performative_percent),
            ("fipa_category", self.fipa_counts, self.fipa_percent),
            ("content_category", self.content_counts, self.content_percent),
        ):
            for key in counts:
                out.append({"block": block, "key": key, "count": counts[key], "percent": f"{pct[key]:.2f}"})
        out.append({"block": "total", "key": "all", "count": self.total, "percent": "100.00" if self.total else "0.00"})
        return out

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "performative_counts": self.performative_counts,
            "performative_percent": self.performative_percent,
            "fipa_counts": self.fipa_counts,
            "fipa_percent": self.fipa_percent,
            "content_counts": self.content_counts,
            "content_percent": self.content_percent,
        }


def fipa_distribution(events: Iterable[dict]) -> DistributionReport:
    """Count sent messages by performative, FIPA group and content category."""
    perf = {p.value: 0 for p in Performative}
    fipa = {c.value: 0 for c in FipaCategory}
    content = {c.value: 0 for c in ContentCategory}
    bad = []
    total = 0
    for e in events:
        if e.get("event_type") != "send":
            continue
        try:
            p = Performative(e.get("performative"))
            c = ContentCategory(e.get("category"))
        except ValueError:
            bad.append(e)
            continue
        perf[p.value] += 1
        fipa[fipa_category(p).value] += 1
        content[c.value] += 1
        total += 1
    if bad:
        raise LogError(bad)
    return DistributionReport(
        total=total,
        performative_counts=perf,
        performative_percent=_percentages(perf, total),
        fipa_percent=_percentages(fipa, total),
        content_percent=_percentages(content, total),
        fipa_counts=fipa,
        content_counts=content,
    )


# ------------------------------------------------------------ Mann-Whitney
def u_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """U for sample a: pairs with a above b, ties counting one half.

    Computed from midrank sums; equals the pair count definition.
    """
    pooled = sorted([(x, 0) for x in a] + [(y, 1) for y in b], key=lambda t: t[0])
    rank_sum_a = 0.0
    i = 0
    while i < len(pooled):
        j = i
        while j < len(pooled) and pooled[j][0] == pooled[i][0]:
            j += 1
        midrank = (i + 1 + j) / 2
        rank_sum_a += midrank * sum(1 for k in range(i, j) if pooled[k][1] == 0)
        i = j
    n = len(a)
    return rank_sum_a - n * (n + 1) / 2


def _tie_sizes(values: Sequence[float]) -> list:
    counts = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return [t for t in counts.values() if t > 1]


def exact_p(u: float, n: int, m: int) -> float:
    """Two-sided exact p from the null distribution of U (no ties)."""
    counts = mw_null_counts(n, m)
    total = sum(counts)
    k = int(round(u))
    lower = sum(counts[: k + 1])
    upper = sum(counts[k:])
    return min(1.0, 2 * min(lower, upper) / total)


def normal_p(u: float, n: int, m: int, ties: Sequence[int]) -> float:
    N = n + m
    mu = n * m / 2
    tie_term = sum(t ** 3 - t for t in ties) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12 * ((N + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(0.0, abs(u - mu) - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple:
    """Return (U_a, two-sided p)."""
    if not a or not b:
        raise ValueError("both samples must be non-empty")
    n, m = len(a), len(b)
    u = u_statistic(a, b)
    ties = _tie_sizes(list(a) + list(b))
    if n + m <= EXACT_LIMIT and not ties:
        return u, exact_p(u, n, m)
    return u, normal_p(u, n, m, ties)


# ------------------------------------------------------------- arm compare
def _metric(run, key: str) -> float:
    return run[key] if isinstance(run, dict) else getattr(run, key)


@dataclass
class ArmStats:
    n: int
    mean: float
    median: float
    stdev: float


@dataclass
class Comparison:
    metric: str
    arm_a: str
    arm_b: str
    a: ArmStats
    b: ArmStats
    u_a: float
    p_value: float
    direction: str  # "a_lower", "b_lower" or "none"

    def row(self) -> dict:
        return {
            "metric": self.metric,
            "arm_a": self.arm_a,
            "arm_b": self.arm_b,
            "n_a": self.a.n,
            "mean_a": f"{self.a.mean:.4f}",
            "median_a": f"{self.a.median:.4f}",
            "stdev_a": f"{self.a.stdev:.4f}",
            "n_b": self.b.n,
            "mean_b": f"{self.b.mean:.4f}",
            "median_b": f"{self.b.median:.4f}",
            "stdev_b": f"{self.b.stdev:.4f}",
            "u_a": f"{self.u_a:.1f}",
            "p_value": f"{self.p_value:.6g}",
            "direction": self.direction,
        }


COMPARISON_COLUMNS = (
    "metric", "arm_a", "arm_b", "n_a", "mean_a", "median_a", "stdev_a",
    "n_b", "mean_b", "median_b", "stdev_b", "u_a", "p_value", "direction",
)


def _arm(values) -> ArmStats:
    return ArmStats(len(values), statistics.fmean(values), statistics.median(values), statistics.stdev(values))


def compare_arms(batch_a, batch_b, metric: str, arm_a: str = "a", arm_b: str = "b") -> Comparison:
    if metric not in METRIC_KEYS:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRIC_KEYS)}")
    if len(batch_a) < 2 or len(batch_b) < 2:
        raise ValueError("each arm needs at least 2 runs")
    xa = [float(_metric(r, metric)) for r in batch_a]
    xb = [float(_metric(r, metric)) for r in batch_b]
    u, p = mann_whitney_u(xa, xb)
    direction = "none"
    if p < ALPHA:
        direction = "a_lower" if u < len(xa) * len(xb) / 2 else "b_lower"
    return Comparison(metric, arm_a, arm_b, _arm(xa), _arm(xb), u, p, direction)


# --------------------------------------------------------------------- CSV
BATCH_COLUMNS = (
    "seed", "outcome", "total_seconds", "no_flow_seconds", "total_messages",
    "error_events", "failure_events", "hung_directives", "shocks",
) + tuple(f"n_{p.value}" for p in Performative) + ("error",)

DISTRIBUTION_COLUMNS = ("block", "key", "count", "percent")


GRAPH_COLUMNS = ("sender", "receiver", "count")


def message_edges(events: Iterable[dict]) -> list:
    """Directed who-spoke-to-whom counts; broadcasts count once per listener."""
    team = []
    counts = {}
    for e in events:
        kind = e.get("event_type")
        if kind == "run_start":
            team = list(e.get("content", {}).get("team", []))
        elif kind == "send":
            target = e.get("target")
            if target == "all":
                if not team:
                    raise LogError([e])
                target = [a for a in team if a != e["actor"]]
            for r in target:
                counts[(e["actor"], r)] = counts.get((e["actor"], r), 0) + 1
    return [{"sender": s, "receiver": r, "count": n} for (s, r), n in sorted(counts.items())]


def batch_rows(results: Sequence[dict]) -> list:
    rows = []
    for r in results:
        row = {c: "" for c in BATCH_COLUMNS}
        row["seed"] = r["seed"]
        if "error" in r:
            row["error"] = r["error"]
        else:
            for c in BATCH_COLUMNS[1:9]:
                row[c] = r[c]
            for p in Performative:
                row[f"n_{p.value}"] = r["message_counts"].get(p.value, 0)
        rows.append(row)
    return rows


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
