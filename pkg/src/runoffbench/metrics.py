"""Hydrograph skill metrics, per-basin evaluation, ensemble aggregation, CDFs.

All metrics take ``(obs, sim)`` in mm/day and ignore days where ``obs`` is
NaN.  A metric whose preconditions fail raises
:class:`MetricUndefinedError`; the evaluation layer records it as undefined
and leaves it out of basin medians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MetricUndefinedError, ParameterError

METRIC_COLUMNS = ("nse", "kge", "r", "alpha", "beta", "fhv", "flv")
SUMMARY_METRICS = ("nse", "kge", "fhv", "flv")
HIGH_FLOW_FRACTION = 0.02
LOW_FLOW_FRACTION = 0.30
LOW_FLOW_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class HydrographPair:
    obs: np.ndarray
    sim: np.ndarray
    dates: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64)
        sim = np.asarray(self.sim, dtype=np.float64)
        if obs.shape != sim.shape or obs.ndim != 1:
            raise ParameterError(f"obs and sim must be equal-length 1-D series, got {obs.shape} and {sim.shape}")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "sim", sim)

    def observed(self) -> tuple[np.ndarray, np.ndarray]:
        keep = ~np.isnan(self.obs)
        sim = self.sim[keep]
        if np.any(~np.isfinite(sim)):
            raise ParameterError("simulated series must be finite on observed days")
        return self.obs[keep], sim


def _pair(obs, sim) -> tuple[np.ndarray, np.ndarray]:
    return HydrographPair(obs, sim).observed()


def nse(obs, sim) -> float:
    """Nash-Sutcliffe efficiency ``1 - Σ(sim-obs)² / Σ(obs-mean(obs))²``."""
    o, s = _pair(obs, sim)
    if o.size < 2:
        raise MetricUndefinedError("NSE needs at least 2 observed values")
    denom = np.sum((o - o.mean()) ** 2)
    if denom == 0:
        raise MetricUndefinedError("NSE undefined: observed series has zero variance")
    return float(1.0 - np.sum((s - o) ** 2) / denom)


@dataclass(frozen=True)
class KGEResult:
    kge: float
    r: float
    alpha: float
    beta: float


def kge(obs, sim) -> KGEResult:
    """Kling-Gupta efficiency with its correlation, variability and bias terms."""
    o, s = _pair(obs, sim)
    if o.size < 2:
        raise MetricUndefinedError("KGE needs at least 2 observed values")
    mo, ms = o.mean(), s.mean()
    do, ds = o - mo, s - ms
    vo, vs = np.mean(do * do), np.mean(ds * ds)
    if vo == 0 or vs == 0:
        raise MetricUndefinedError("KGE undefined: zero variance in obs or sim")
    if mo == 0:
        raise MetricUndefinedError("KGE undefined: observed mean is zero")
    # sqrt(v * v) == v exactly in IEEE arithmetic, so sim == obs gives r == 1 bit-for-bit
    r = float(np.mean(do * ds) / np.sqrt(vo * vs))
    alpha = float(np.sqrt(vs) / np.sqrt(vo))
    beta = float(ms / mo)
    value = 1.0 - math.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2)
    return KGEResult(value, r, alpha, beta)


def fhv(obs, sim, h_frac: float = HIGH_FLOW_FRACTION) -> float:
    """Percent bias of the top ``h_frac`` of the flow-duration curve."""
    if not 0 < h_frac < 1:
        raise ParameterError("h_frac must lie in (0, 1)")
    o, s = _pair(obs, sim)
    if o.size < math.ceil(1.0 / h_frac):
        raise MetricUndefinedError(f"FHV needs at least {math.ceil(1.0 / h_frac)} observed values")
    n_high = max(1, int(math.floor(h_frac * o.size)))
    o_high = np.sort(o)[::-1][:n_high]
    s_high = np.sort(s)[::-1][:n_high]
    denom = np.sum(o_high)
    if denom == 0:
        raise MetricUndefinedError("FHV undefined: zero high-flow volume in obs")
    return float(100.0 * np.sum(s_high - o_high) / denom)


def flv(obs, sim, l_frac: float = LOW_FLOW_FRACTION, floor: float = LOW_FLOW_FLOOR) -> float:
    """Percent bias of log low-flow volume over the bottom ``l_frac`` of the FDC.

    Both series are clamped at ``floor`` before taking logs.
    """
    if not 0 < l_frac < 1:
        raise ParameterError("l_frac must lie in (0, 1)")
    o, s = _pair(obs, sim)
    if o.size < math.ceil(1.0 / l_frac):
        raise MetricUndefinedError(f"FLV needs at least {math.ceil(1.0 / l_frac)} observed values")
    n_low = max(1, int(math.floor(l_frac * o.size)))
    # ascending sort: the low segment is the head, its minimum is element 0
    lo = np.log(np.sort(np.maximum(o, floor))[:n_low])
    ls = np.log(np.sort(np.maximum(s, floor))[:n_low])
    obs_vol = np.sum(lo - lo[0])
    sim_vol = np.sum(ls - ls[0])
    if obs_vol == 0:
        raise MetricUndefinedError("FLV undefined: constant low-flow segment in obs")
    return float(-100.0 * (sim_vol - obs_vol) / obs_vol)


# ---------------------------------------------------------------------------
# per-basin evaluation


@dataclass
class BasinMetrics:
    basin_id: str
    nse: float = math.nan
    kge: float = math.nan
    r: float = math.nan
    alpha: float = math.nan
    beta: float = math.nan
    fhv: float = math.nan
    flv: float = math.nan
    undefined: dict[str, str] = field(default_factory=dict)

    def row(self) -> list[float]:
        return [getattr(self, c) for c in METRIC_COLUMNS]


def basin_metrics(basin_id: str, obs, sim, h_frac: float = HIGH_FLOW_FRACTION,
                  l_frac: float = LOW_FLOW_FRACTION, floor: float = LOW_FLOW_FLOOR) -> BasinMetrics:
    out = BasinMetrics(basin_id)
    try:
        out.nse = nse(obs, sim)
    except MetricUndefinedError as exc:
        out.undefined["nse"] = str(exc)
    try:
        k = kge(obs, sim)
        out.kge, out.r, out.alpha, out.beta = k.kge, k.r, k.alpha, k.beta
    except MetricUndefinedError as exc:
        for name in ("kge", "r", "alpha", "beta"):
            out.undefined[name] = str(exc)
    try:
        out.fhv = fhv(obs, sim, h_frac)
    except MetricUndefinedError as exc:
        out.undefined["fhv"] = str(exc)
    try:
        out.flv = flv(obs, sim, l_frac, floor)
    except MetricUndefinedError as exc:
        out.undefined["flv"] = str(exc)
    return out


@dataclass
class MetricReport:
    basins: list[BasinMetrics]
    label: str = ""

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(b, metric) for b in self.basins], dtype=np.float64)

    def median(self, metric: str) -> float:
        v = self.values(metric)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if v.size else math.nan

    def n_undefined(self, metric: str) -> int:
        return int(np.sum(~np.isfinite(self.values(metric))))

    @property
    def medians(self) -> dict[str, float]:
        return {m: self.median(m) for m in METRIC_COLUMNS}

    def to_csv(self) -> str:
        lines = ["basin_id," + ",".join(METRIC_COLUMNS)]
        for b in self.basins:
            lines.append(b.basin_id + "," + ",".join(repr(float(v)) for v in b.row()))
        lines.append("")
        lines.append("statistic," + ",".join(METRIC_COLUMNS))
        lines.append("median," + ",".join(repr(self.median(m)) for m in METRIC_COLUMNS))
        lines.append("n_undefined," + ",".join(str(self.n_undefined(m)) for m in METRIC_COLUMNS))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


def read_metric_report(path, label: str = "") -> MetricReport:
    basins = []
    for line in Path(path).read_text().splitlines()[1:]:
        if not line:
            break
        fields = line.split(",")
        b = BasinMetrics(fields[0], *(float(v) for v in fields[1:]))
        basins.append(b)
    return MetricReport(basins, label)


def evaluate_model(model, records, split, seq_len: int | None = None, **metric_kw) -> MetricReport:
    """Score ``model`` on every basin's test window.

    ``model`` is anything with ``simulate(record, split, seq_len) -> (dates, sim_mm)``;
    trained checkpoints qualify.
    """
    basins = []
    for rec in records:
        dates, sim = model.simulate(rec, split, seq_len)
        idx = np.searchsorted(rec.dates, dates)
        basins.append(basin_metrics(rec.basin_id, rec.discharge[idx], sim, **metric_kw))
    return MetricReport(basins, getattr(model, "label", ""))


def evaluate_prediction_mean(models: Sequence, records, split, seq_len: int | None = None, **metric_kw) -> MetricReport:
    """Average members' mm/day predictions per day, then score the mean hydrograph."""
    if not models:
        raise ParameterError("need at least one member")
    basins = []
    for rec in records:
        runs = [m.simulate(rec, split, seq_len) for m in models]
        dates = runs[0][0]
        if any(not np.array_equal(d, dates) for d, _ in runs):
            raise ParameterError(f"members predict different days for basin {rec.basin_id}")
        sim = np.mean([s for _, s in runs], axis=0)
        idx = np.searchsorted(rec.dates, dates)
        basins.append(basin_metrics(rec.basin_id, rec.discharge[idx], sim, **metric_kw))
    return MetricReport(basins, "prediction-mean")


class ReplayOracle:
    """Stub model that returns the observed hydrograph (NaN days filled with 0)."""

    label = "replay-oracle"

    def simulate(self, record, split, seq_len=None):
        keep = (record.dates >= split.test_start) & (record.dates <= split.test_end)
        return record.dates[keep], np.nan_to_num(record.discharge[keep], nan=0.0)


# ---------------------------------------------------------------------------
# ensembles and CDFs


@dataclass
class MetricSummary:
    metric: str
    member_medians: list[float]
    mean: float
    std: float
    degenerate: bool


@dataclass
class EnsembleSummary:
    metrics: dict[str, MetricSummary]

    def __getitem__(self, metric: str) -> MetricSummary:
        return self.metrics[metric]

    def to_csv(self) -> str:
        lines = ["metric,mean,std,n_members,degenerate"]
        for m in self.metrics.values():
            lines.append(f"{m.metric},{m.mean!r},{m.std!r},{len(m.member_medians)},{int(m.degenerate)}")
        return "\n".join(lines) + "\n"

    def table_row(self) -> str:
        """Human-readable ``METRIC: mean ± std`` lines; a single member is flagged."""
        lines = []
        for m in self.metrics.values():
            flag = " (single member: std degenerate)" if m.degenerate else ""
            lines.append(f"{m.metric.upper()}: {m.mean:.4f} ± {m.std:.4f}{flag}")
        return "\n".join(lines) + "\n"


def summarize_ensemble(reports: Sequence[MetricReport], metrics: Iterable[str] = SUMMARY_METRICS) -> EnsembleSummary:
    """Mean and sample standard deviation (n-1) of members' basin-median metrics.

    With one member the std is reported as 0 and flagged ``degenerate``.
    """
    if not reports:
        raise ParameterError("need at least one report")
    out = {}
    for metric in metrics:
        medians = [r.median(metric) for r in reports]
        finite = np.array([v for v in medians if np.isfinite(v)])
        mean = float(np.mean(finite)) if finite.size else math.nan
        if finite.size >= 2:
            std = float(np.std(finite, ddof=1))
        else:
            std = 0.0
        out[metric] = MetricSummary(metric, medians, mean, std, finite.size < 2)
    return EnsembleSummary(out)


@dataclass
class CdfSeries:
    metric: str
    values: np.ndarray
    levels: np.ndarray
    n_excluded: int = 0

    def to_csv(self) -> str:
        lines = ["value,cdf_level"]
        lines += [f"{v!r},{p!r}" for v, p in zip(self.values.tolist(), self.levels.tolist())]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


def cdf_series(values, metric: str) -> CdfSeries:
    """Empirical CDF with plotting positions ``(i - 0.5) / n`` over finite values."""
    v = np.asarray(values, dtype=np.float64).ravel()
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        raise ParameterError(f"no finite {metric} values for a CDF")
    n = finite.size
    return CdfSeries(metric, np.sort(finite), (np.arange(1, n + 1) - 0.5) / n, int(v.size - n))
