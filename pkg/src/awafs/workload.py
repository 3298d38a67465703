"""Flow-size distributions and Poisson flow generation.

CDF files hold ``size_bytes cum_prob`` pairs, one per line, ``#`` starts a
comment. Sampling is inverse-transform with linear interpolation in size
between points; probability mass at or below the first point's probability
maps to the first size, so a leading point with probability > 0 is an atom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .simcore import NS_PER_S
from .transport import FlowSpec

BUILTIN_WORKLOADS = ("web_search", "data_mining", "cache", "hadoop", "bimodal_10k", "bimodal_20k")


class CdfError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadCdf:
    sizes: np.ndarray
    probs: np.ndarray
    name: str = ""

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if sizes.ndim != 1 or sizes.size == 0 or sizes.shape != probs.shape:
            raise CdfError("a CDF needs one or more (size, prob) points")
        if np.any(np.diff(sizes) <= 0):
            raise CdfError("sizes must be strictly increasing")
        if np.any(np.diff(probs) < 0):
            raise CdfError("cumulative probabilities must be nondecreasing")
        if probs[0] < 0 or probs[-1] != 1.0:
            raise CdfError("cumulative probabilities must start >= 0 and end at 1.0")
        if sizes[0] < 1:
            raise CdfError("flow sizes must be >= 1 byte")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.sizes.tolist(), self.probs.tolist()))

    def cdf(self, x):
        """P(size <= x) under the interpolated distribution."""
        x = np.asarray(x, dtype=np.float64)
        out = np.interp(x, self.sizes, self.probs)
        return np.where(x < self.sizes[0], 0.0, out)

    def quantile(self, u):
        return inverse_sample(self, u)


def parse_cdf(text: str, name: str = "") -> WorkloadCdf:
    sizes, probs = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CdfError(f"{name or '<cdf>'}:{lineno}: expected 'size_bytes cum_prob', got {raw!r}")
        try:
            size, prob = float(parts[0]), float(parts[1])
        except ValueError:
            raise CdfError(f"{name or '<cdf>'}:{lineno}: not a number in {raw!r}") from None
        if sizes and size <= sizes[-1]:
            raise CdfError(f"{name or '<cdf>'}:{lineno}: size {size:g} does not increase")
        if probs and prob < probs[-1]:
            raise CdfError(f"{name or '<cdf>'}:{lineno}: probability {prob:g} decreases")
        if not 0 <= prob <= 1:
            raise CdfError(f"{name or '<cdf>'}:{lineno}: probability {prob:g} outside [0, 1]")
        sizes.append(size)
        probs.append(prob)
    if not sizes:
        raise CdfError(f"{name or '<cdf>'}: no data points")
    if probs[-1] != 1.0:
        raise CdfError(f"{name or '<cdf>'}:{lineno}: last probability is {probs[-1]:g}, not 1.0")
    return WorkloadCdf(np.array(sizes), np.array(probs), name)


def load_cdf(path) -> WorkloadCdf:
    """Read a CDF file, or a built-in workload by name (``web_search`` ...)."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN_WORKLOADS:
        text = resources.files("awafs.data").joinpath(f"{path}.cdf").read_text()
        return parse_cdf(text, str(path))
    return parse_cdf(p.read_text(), p.stem)


def inverse_sample(cdf: WorkloadCdf, u):
    """Flow size (bytes, float) at uniform fraction(s) ``u`` in [0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    i = np.searchsorted(cdf.probs, u, side="left")
    i = np.clip(i, 1, len(cdf.probs) - 1) if len(cdf.probs) > 1 else np.zeros_like(i)
    if len(cdf.probs) == 1:
        return np.full(u.shape, cdf.sizes[0]) if u.ndim else float(cdf.sizes[0])
    p0, p1 = cdf.probs[i - 1], cdf.probs[i]
    s0, s1 = cdf.sizes[i - 1], cdf.sizes[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(p1 > p0, (u - p0) / (p1 - p0), 1.0)
    out = s0 + (s1 - s0) * np.clip(frac, 0.0, 1.0)
    out = np.where(u <= cdf.probs[0], cdf.sizes[0], out)
    return out if out.ndim else float(out)


def sample_sizes(cdf: WorkloadCdf, u) -> np.ndarray:
    """Integer byte sizes (>= 1) for uniforms ``u``."""
    return np.maximum(1, np.rint(inverse_sample(cdf, u))).astype(np.int64)


def mean_size(cdf: WorkloadCdf) -> float:
    mass = np.diff(cdf.probs)
    mids = (cdf.sizes[:-1] + cdf.sizes[1:]) / 2
    return float(cdf.probs[0] * cdf.sizes[0] + np.sum(mass * mids))


def arrival_rate(load: float, access_capacity_bps: float, mean_bytes: float) -> float:
    """Flows/second per receiving host that offers ``load`` of its access link."""
    if load == 0:
        return 0.0
    return load * access_capacity_bps / (8.0 * mean_bytes)


@dataclass
class Phase:
    start: float
    workload: str


@dataclass
class TrafficPlan:
    load: float
    phases: list[Phase] = field(default_factory=lambda: [Phase(0.0, "web_search")])
    flow_count: int | None = None
    duration: float | None = None
    pairing: str = "uniform"
    # (workload when src < dst, workload otherwise) for heterogeneous pairing
    split: tuple[str, str] = ("web_search", "data_mining")

    def validate(self) -> None:
        if not 0 < self.load < 1:
            raise ValueError(f"load must lie in (0, 1), got {self.load}")
        if (self.flow_count is None) == (self.duration is None):
            raise ValueError("exactly one of flow_count and duration must be set")
        if self.flow_count is not None and (self.flow_count < 1 or self.flow_count != int(self.flow_count)):
            raise ValueError("flow_count must be an integer >= 1")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.pairing not in ("uniform", "heterogeneous-ij"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        starts = [p.start for p in self.phases]
        if not starts or starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("phase start times must begin at 0 and increase")

    def workload_names(self) -> list[str]:
        names = [p.workload for p in self.phases]
        if self.pairing == "heterogeneous-ij":
            names += list(self.split)
        return sorted(set(names))


@dataclass
class FlowSet:
    src: np.ndarray
    dst: np.ndarray
    size: np.ndarray
    start_ns: np.ndarray
    workload: np.ndarray
    workload_names: list[str]

    def __len__(self):
        return len(self.size)

    def specs(self):
        for i in range(len(self)):
            yield FlowSpec(i, int(self.src[i]), int(self.dst[i]), int(self.size[i]), int(self.start_ns[i]))

    @classmethod
    def from_specs(cls, specs, names=("custom",)) -> "FlowSet":
        specs = sorted(specs, key=lambda s: (s.start_time, s.flow_id))
        arr = lambda attr: np.array([getattr(s, attr) for s in specs], dtype=np.int64)
        return cls(arr("src_host"), arr("dst_host"), arr("size"), arr("start_time"),
                   np.zeros(len(specs), dtype=np.int64), list(names))


def generate(plan: TrafficPlan, n_hosts: int, access_bps: float, rng: np.random.Generator,
             cdfs: dict[str, WorkloadCdf] | None = None) -> FlowSet:
    """Poisson flow arrivals over the plan's phases.

    The superposition of per-host Poisson processes is drawn as one process of
    rate ``n_hosts * lambda`` whose destination is uniform over hosts. Each
    flow consumes draws in a fixed order: interarrival, destination, source,
    size uniform.
    """
    plan.validate()
    if n_hosts < 2:
        raise ValueError("need at least two hosts")
    names = plan.workload_names()
    cdfs = {n: (cdfs or {}).get(n) or load_cdf(n) for n in names}
    index = {n: i for i, n in enumerate(names)}

    def phase_rate(phase):
        if plan.pairing == "heterogeneous-ij":
            mean = 0.5 * (mean_size(cdfs[plan.split[0]]) + mean_size(cdfs[plan.split[1]]))
        else:
            mean = mean_size(cdfs[phase.workload])
        return n_hosts * arrival_rate(plan.load, access_bps, mean)

    limit_n = plan.flow_count if plan.flow_count is not None else np.inf
    limit_t = plan.duration if plan.duration is not None else np.inf
    src, dst, size, start, wl = [], [], [], [], []
    t = 0.0
    ph = 0
    phases = plan.phases
    while len(size) < limit_n:
        rate = phase_rate(phases[ph])
        gap = rng.exponential(1.0 / rate)
        d = int(rng.integers(n_hosts))
        s = (d + 1 + int(rng.integers(n_hosts - 1))) % n_hosts
        u = float(rng.random())
        t_next = t + gap
        if ph + 1 < len(phases) and t_next >= phases[ph + 1].start:
            # memoryless: restart the clock at the boundary with the new rate
            t = phases[ph + 1].start
            ph += 1
            continue
        if t_next >= limit_t:
            break
        t = t_next
        if plan.pairing == "heterogeneous-ij":
            name = plan.split[0] if s < d else plan.split[1]
        else:
            name = phases[ph].workload
        src.append(s)
        dst.append(d)
        size.append(int(sample_sizes(cdfs[name], u)))
        start.append(int(round(t * NS_PER_S)))
        wl.append(index[name])
    as64 = lambda x: np.array(x, dtype=np.int64)
    return FlowSet(as64(src), as64(dst), as64(size), as64(start), as64(wl), names)
