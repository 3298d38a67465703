"""FCT bookkeeping, size classes, summaries and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .adapt import nearest_rank
from .simcore import NS_PER_S

SMALL_MAX = 100_000
MEDIUM_MAX = 10_000_000

FLOW_COLUMNS = ["flow_id", "src", "dst", "size", "class", "start", "fct", "timeouts"]
SUMMARY_COLUMNS = ["scenario", "load", "scheduler", "class", "metric", "value"]
AGGREGATE_COLUMNS = SUMMARY_COLUMNS + ["ci95_half", "runs"]
TRAJECTORY_COLUMNS = ["time", "switch", "port", "thr_index", "bytes"]
CLASS_ORDER = ("small", "medium", "large", "all")


class FlowClass(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class NoSamples(ValueError):
    pass


def classify(size: int) -> FlowClass:
    if size <= SMALL_MAX:
        return FlowClass.SMALL
    if size <= MEDIUM_MAX:
        return FlowClass.MEDIUM
    return FlowClass.LARGE


def class_masks(sizes) -> dict[str, np.ndarray]:
    sizes = np.asarray(sizes)
    return {
        "small": sizes <= SMALL_MAX,
        "medium": (sizes > SMALL_MAX) & (sizes <= MEDIUM_MAX),
        "large": sizes > MEDIUM_MAX,
        "all": np.ones(sizes.shape, dtype=bool),
    }


@dataclass(frozen=True)
class Summary:
    mean: float
    tail: float
    count: int


def summarize(samples, tail_pct: float = 0.99) -> Summary:
    """Mean, nearest-rank tail percentile and count."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise NoSamples("no samples")
    return Summary(float(x.mean()), float(x[nearest_rank(tail_pct, x.size) - 1]), int(x.size))


def ci95(run_means, method: str = "normal"):
    """``(grand_mean, half_width)`` over per-run values, or None with < 2 runs.

    ``method="normal"`` uses 1.96 s/sqrt(n); ``"t"`` the Student-t quantile.
    """
    x = np.asarray(run_means, dtype=np.float64)
    if x.size < 2:
        return None
    z = 1.96 if method == "normal" else float(sps.t.ppf(0.975, x.size - 1))
    return float(x.mean()), z * float(x.std(ddof=1)) / math.sqrt(x.size)


def _fmt_s(ns) -> str:
    return f"{ns / NS_PER_S:.9f}"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.9f}"


@dataclass
class MetricsLedger:
    """Per-flow records of one run plus its threshold trajectory."""

    flow_id: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    size: np.ndarray
    start_ns: np.ndarray
    fct_ns: np.ndarray            # -1 when unfinished
    timeouts: np.ndarray
    traj: list = field(default_factory=list)  # (time_ns, switch, port, thr_vector)
    warmup_ns: int = 0
    tail_pct: float = 0.99

    @classmethod
    def from_run(cls, result, warmup: float = 0.0, tail_pct: float = 0.99) -> "MetricsLedger":
        fl = result.flows
        traj = [(int(t), *result.labels[p], [int(v) for v in thr])
                for t, p, thr in zip(result.traj_t, result.traj_port, result.traj_thr)]
        return cls(np.arange(len(fl)), fl.src.copy(), fl.dst.copy(), fl.size.copy(),
                   fl.start_ns.copy(), result.fct_ns.copy(), result.timeouts.copy(), traj,
                   int(round(warmup * NS_PER_S)), tail_pct)

    @classmethod
    def empty(cls) -> "MetricsLedger":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, z, z)

    def __len__(self):
        return len(self.size)

    @property
    def measured(self) -> np.ndarray:
        """Flows counted in aggregates: started after warm-up."""
        return self.start_ns >= self.warmup_ns

    def aggregates(self) -> dict[str, dict[str, float | int | None]]:
        """Per class: mean/tail FCT (s), completed count, unfinished count, timeouts."""
        out = {}
        done = self.fct_ns >= 0
        for name, mask in class_masks(self.size).items():
            m = mask & self.measured
            fcts = self.fct_ns[m & done] / NS_PER_S
            try:
                s = summarize(fcts, self.tail_pct)
                mean, tail = s.mean, s.tail
            except NoSamples:
                mean = tail = None
            out[name] = {"mean_fct": mean, "p99_fct": tail, "count": int((m & done).sum()),
                         "unfinished": int((m & ~done).sum()),
                         "timeouts": int(self.timeouts[m].sum())}
        return out

    def summary_rows(self, scenario: str, load, scheduler: str) -> list[list[str]]:
        rows = []
        for cls_name, metrics in self.aggregates().items():
            for metric, value in metrics.items():
                if value is None:
                    continue
                rows.append([scenario, f"{load}", scheduler, cls_name, metric, _fmt(value)])
        return rows


def _writer(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return fh, csv.writer(fh, lineterminator="\n")


def emit(ledger: MetricsLedger, out_dir, scenario: str = "custom", load="", scheduler: str = "") -> dict:
    """Write ``flows.csv``, ``summary.csv`` and ``trajectory.csv`` under ``out_dir``."""
    out = Path(out_dir)
    paths = {"flows": out / "flows.csv", "summary": out / "summary.csv",
             "trajectory": out / "trajectory.csv"}
    fh, w = _writer(paths["flows"])
    with fh:
        w.writerow(FLOW_COLUMNS)
        for i in range(len(ledger)):
            fct = int(ledger.fct_ns[i])
            w.writerow([int(ledger.flow_id[i]), int(ledger.src[i]), int(ledger.dst[i]),
                        int(ledger.size[i]), classify(int(ledger.size[i])).value,
                        _fmt_s(int(ledger.start_ns[i])), _fmt_s(fct) if fct >= 0 else "",
                        int(ledger.timeouts[i])])
    fh, w = _writer(paths["summary"])
    with fh:
        w.writerow(SUMMARY_COLUMNS)
        if len(ledger):
            w.writerows(ledger.summary_rows(scenario, load, scheduler))
    fh, w = _writer(paths["trajectory"])
    with fh:
        w.writerow(TRAJECTORY_COLUMNS)
        for t, switch, port, thr in ledger.traj:
            for j, v in enumerate(thr, start=1):
                w.writerow([_fmt_s(t), switch, port, j, v])
    return paths


def read_flows_csv(path) -> MetricsLedger:
    """Rebuild a ledger (without trajectory) from a per-flow CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k, f=int: np.array([f(r[k]) for r in rows], dtype=np.int64)
    to_ns = lambda s: int(round(float(s) * NS_PER_S)) if s else -1
    return MetricsLedger(col("flow_id"), col("src"), col("dst"), col("size"),
                         col("start", to_ns), col("fct", to_ns), col("timeouts"))


def aggregate(ledgers, scenario: str, load, scheduler: str, method: str = "normal") -> list[list[str]]:
    """Cross-run rows: the grand mean of each per-run metric with its CI half-width."""
    per_run = [l.aggregates() for l in ledgers]
    rows = []
    for cls_name in CLASS_ORDER:
        for metric in ("mean_fct", "p99_fct", "count", "unfinished", "timeouts"):
            vals = [a[cls_name][metric] for a in per_run if a[cls_name][metric] is not None]
            if not vals:
                continue
            ci = ci95(vals, method)
            mean = float(np.mean(vals))
            rows.append([scenario, f"{load}", scheduler, cls_name, metric, f"{mean:.9f}",
                         f"{ci[1]:.9f}" if ci else "", str(len(vals))])
    return rows


def write_aggregate(rows, path) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(AGGREGATE_COLUMNS)
        w.writerows(rows)
    return path
