"""Evaluation harness: attack success rates, the Wilcoxon signed-rank test,
seed-variability summaries, covariate-shift simulation, randomized-ensemble
alert-rate detection, and report emitters."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import auth, ingest
from .auth import average_ranks
from .ingest import VEL, RepSeq, Trajectory

Z_CRIT = 1.96


# -- ASR ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AsrResult:
    n_samples: int
    n_accepted: int
    asr: float
    setting: dict = field(default_factory=dict)


def subsample(items: Sequence, n: int | None, seed: int) -> list:
    """First ``n`` items in a seeded shuffled order (all items, in order,
    when there are at most ``n``)."""
    if n is None or len(items) <= n:
        return list(items)
    order = np.random.default_rng(seed).permutation(len(items))[:n]
    return [items[i] for i in order]


def decisions(model, samples: Sequence) -> np.ndarray:
    """Legitimate/illegitimate decisions for trajectories or VEL sequences."""
    if len(samples) == 0:
        return np.zeros(0, dtype=bool)
    if isinstance(samples[0], RepSeq):
        if isinstance(model, auth.CnnModel):
            return model.decide(model.score_vel(auth.vel_batch(samples, model.seqlen)))
        if hasattr(model, "arch"):  # surrogate
            vel = np.stack([s.points for s in samples])
            return model.decide(vel, np.stack([s.dts for s in samples]), np.stack([s.origin for s in samples]))
        samples = [ingest.from_rep(s) for s in samples]
    return model.accepts(samples)


def asr_from_decisions(d: np.ndarray, setting: dict | None = None) -> AsrResult:
    d = np.asarray(d, dtype=bool)
    n = len(d)
    k = int(d.sum())
    return AsrResult(n, k, k / n if n else 0.0, dict(setting or {}))


def asr(model, samples: Sequence, n: int | None = 1000, seed: int = 0, setting: dict | None = None) -> AsrResult:
    """Fraction of (at most ``n``, seeded subsample) samples the calibrated
    ``model`` accepts as legitimate."""
    if getattr(model, "threshold", 0.0) is None:
        raise auth.NotCalibratedError(f"{type(model).__name__} has no calibrated threshold")
    chosen = subsample(samples, n, seed)
    if not chosen:
        raise ValueError("no samples to evaluate")
    return asr_from_decisions(decisions(model, chosen), setting)


# -- Wilcoxon signed-rank -----------------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    n_pairs: int
    w_plus: float
    w_minus: float
    z: float
    significant: bool
    small_sample: bool


def wilcoxon(pairs: Iterable[tuple[float, float]], min_pairs: int = 3) -> WilcoxonResult:
    """Signed-rank test on ``a - b`` with the normal approximation

    ``z = (W+ - n(n+1)/4) / sqrt(n(n+1)(2n+1)/24)``

    after dropping zero differences; ties in ``|d|`` share average ranks.
    Below 10 pairs the approximation is rough and ``small_sample`` is set.
    """
    d = np.array([float(a) - float(b) for a, b in pairs])
    d = d[d != 0]
    n = len(d)
    if n < min_pairs:
        raise ValueError(f"need at least {min_pairs} non-zero differences, got {n}")
    r = average_ranks(np.abs(d))
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    z = (w_plus - n * (n + 1) / 4) / math.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    return WilcoxonResult(n, w_plus, w_minus, z, abs(z) > Z_CRIT, n < 10)


# -- variability -------------------------------------------------------------------


@dataclass(frozen=True)
class VariabilityResult:
    results: tuple[AsrResult, ...]
    median: float
    q1: float
    q3: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def values(self) -> np.ndarray:
        return np.array([r.asr for r in self.results])


def variability_study(run: Callable[[int], AsrResult], seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> VariabilityResult:
    """Repeat a train-and-attack run once per seed; quartiles use linear
    interpolation between order statistics."""
    results = tuple(run(int(s)) for s in seeds)
    v = np.array([r.asr for r in results])
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return VariabilityResult(results, float(med), float(q1), float(q3))


# -- covariate shift ---------------------------------------------------------------


def covariate_shift(ts: Sequence[Trajectory], deg_range: tuple[float, float] = (45.0, 90.0), seed: int = 0) -> list[Trajectory]:
    """Rotate each trajectory by its own uniform angle in ``deg_range``."""
    lo, hi = deg_range
    if hi < lo:
        raise ValueError("empty angle range")
    angles = np.random.default_rng(seed).uniform(lo, hi, size=len(ts))
    return [ingest.rotate(t, float(a)) for t, a in zip(ts, angles)]


# -- detection ---------------------------------------------------------------------

CLEAN, COVARIATE_SHIFT, SUSPECTED = "clean", "covariate_shift", "surrogate_attack_suspected"
MIN_PER_MODEL = 20


@dataclass
class DetectionReport:
    rates: dict[str, float]
    counts: dict[str, int]
    verdict: str
    suspect: str | None = None
    full_rates: dict[str, float] = field(default_factory=dict)
    baseline: dict[str, float] | None = None
    margin: float = 0.2
    low_confidence: bool = False

    @property
    def label(self) -> str:
        return f"{SUSPECTED}({self.suspect})" if self.suspect else self.verdict

    def to_dict(self) -> dict:
        return {**asdict(self), "label": self.label}


def alert_rates(models: dict[str, object], samples: Sequence) -> dict[str, float]:
    """Alert (rejection) rate of each model over all samples."""
    return {name: float(1.0 - decisions(m, samples).mean()) for name, m in models.items()}


def pooled_alert_rates(ensembles: dict[str, dict[str, object]], streams: dict[str, Sequence]) -> dict[str, float]:
    """Alert rate per model name when every model of each group scores that
    group's whole stream, with alerts and samples summed over groups."""
    alerts: dict[str, float] = {}
    totals: dict[str, int] = {}
    for g, models in ensembles.items():
        for name, m in models.items():
            alerts[name] = alerts.get(name, 0.0) + float((~decisions(m, streams[g])).sum())
            totals[name] = totals.get(name, 0) + len(streams[g])
    return {n: alerts[n] / totals[n] if totals[n] else 0.0 for n in alerts}


def clean_baseline(models: dict[str, object], clean: Sequence) -> dict[str, float]:
    return alert_rates(models, clean)


def verdict_from_rates(
    rates: dict[str, float],
    full_rates: dict[str, float],
    baseline: dict[str, float] | None,
    margin: float = 0.2,
    shift_margin: float = 0.0,
) -> tuple[str, str | None]:
    """Verdict rule.

    Rates are read as elevations over each model's clean baseline (zero when
    no baseline is given), since models differ in how much a benign shift
    moves them. A model is suspected when its routed rate and its elevation
    both sit more than ``margin`` below the mean of the others, its
    full-stream elevation does too, and the others are elevated by at least
    ``margin / 2``. Otherwise the verdict is ``covariate_shift`` when every
    rate exceeds its baseline by more than ``shift_margin``, else ``clean``.
    """
    names = list(rates)
    base = baseline or dict.fromkeys(names, 0.0)
    lift = {n: rates[n] - base[n] for n in names}
    full_lift = {n: full_rates[n] - base[n] for n in names}
    candidates = []
    for m in names:
        others = [o for o in names if o != m]
        if not others:
            continue
        mean_o = float(np.mean([rates[o] for o in others]))
        lift_o = float(np.mean([lift[o] for o in others]))
        full_o = float(np.mean([full_lift[o] for o in others]))
        if (
            rates[m] < mean_o - margin
            and lift[m] < lift_o - margin
            and full_lift[m] < full_o - margin
            and lift_o > margin / 2
        ):
            candidates.append((lift[m] - lift_o, m))
    if candidates:
        return SUSPECTED, min(candidates)[1]
    if baseline is not None and all(lift[n] > shift_margin for n in names):
        return COVARIATE_SHIFT, None
    return CLEAN, None


def detection_run(
    models: dict[str, object],
    stream: Sequence,
    seed: int = 0,
    margin: float = 0.2,
    baseline: dict[str, float] | None = None,
    shift_margin: float = 0.0,
) -> DetectionReport:
    """Route each stream sample to one uniformly chosen model and compare
    per-model alert rates."""
    return detection_run_pooled({"": models}, {"": stream}, seed, margin, baseline, shift_margin)


def detection_run_pooled(
    ensembles: dict[str, dict[str, object]],
    streams: dict[str, Sequence],
    seed: int = 0,
    margin: float = 0.2,
    baseline: dict[str, float] | None = None,
    shift_margin: float = 0.0,
) -> DetectionReport:
    """Detection over several deployments (one per user, say) that share the
    same model names.

    Each group routes its own stream through its own ensemble; alerts and
    routed counts are summed per model name before the verdict, so a rate is
    the fraction of alerts over every sample that name received.
    """
    if not ensembles:
        raise ValueError("no ensembles")
    names = list(next(iter(ensembles.values())))
    if len(names) < 2:
        raise ValueError("detection needs at least two models")
    if any(sorted(ms) != sorted(names) for ms in ensembles.values()):
        raise ValueError("every ensemble must hold the same model names")
    rng = np.random.default_rng(seed)
    alerts = dict.fromkeys(names, 0.0)
    counts = dict.fromkeys(names, 0)
    for g, models in ensembles.items():
        stream = streams[g]
        assign = rng.integers(0, len(names), size=len(stream))
        for i, name in enumerate(names):
            mine = [s for s, a in zip(stream, assign) if a == i]
            counts[name] += len(mine)
            if mine:
                alerts[name] += float((~decisions(models[name], mine)).sum())
    rates = {n: alerts[n] / counts[n] if counts[n] else 0.0 for n in names}
    full = pooled_alert_rates(ensembles, streams)
    verdict, suspect = verdict_from_rates(rates, full, baseline, margin, shift_margin)
    return DetectionReport(
        rates, counts, verdict, suspect, full, baseline, margin, low_confidence=min(counts.values()) < MIN_PER_MODEL
    )


# -- reports -----------------------------------------------------------------------

REPORT_FIELDS = ("dataset", "user", "model", "attack", "settings", "metric", "value", "seed", "timestamp")


@dataclass
class EvalRecord:
    dataset: str
    user: str
    model: str
    attack: str
    settings: dict
    metric: str
    value: float
    seed: int
    timestamp: str = ""

    def key(self) -> tuple:
        return (self.dataset, self.user, self.model, self.attack, json.dumps(self.settings, sort_keys=True), self.metric, self.seed)


def record(dataset: str, user: str, model: str, attack: str, settings: dict, metric: str, value: float, seed: int) -> EvalRecord:
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return EvalRecord(dataset, user, model, attack, dict(settings), metric, float(value), int(seed), stamp)


def write_report(records: Sequence[EvalRecord], json_path: str | Path, csv_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps([asdict(r) for r in records], indent=2, sort_keys=True), encoding="utf-8")
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_FIELDS)
            for r in records:
                d = asdict(r)
                d["settings"] = json.dumps(r.settings, sort_keys=True)
                w.writerow([d[f] for f in REPORT_FIELDS])


def read_report(path: str | Path) -> list[EvalRecord]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not all(isinstance(d, dict) for d in data):
        raise ValueError(f"{path}: not a list of evaluation records")
    return [EvalRecord(**d) for d in data]


def _fmt(vals: list[float], with_std: bool) -> str:
    if not vals:
        return ""
    m = float(np.mean(vals))
    if with_std:
        return f"{m:.5g} +- {float(np.std(vals)):.5g}"
    return f"{m:.5g}"


def _imitation_row(r: EvalRecord) -> str:
    return f"{r.settings.get('method', 'start_point')} / {r.settings.get('seqlen', '')}"


def _surrogate_row(r: EvalRecord) -> str:
    if r.attack == "stats":
        return "Statistics-based"
    return str(r.settings.get("arch", r.attack))


# table id -> (record filter, row label, column label, show std)
TABLES: dict[str, tuple] = {
    "I": (lambda r: r.metric in ("auc", "eer") and r.attack == "none", lambda r: r.model, lambda r: f"{r.dataset} {r.metric.upper()}", False),
    "III": (lambda r: r.metric == "asr" and r.attack == "stats", lambda r: "Statistics-based baseline", lambda r: f"{r.dataset} {r.model}", False),
    "IV": (lambda r: r.metric == "asr" and r.attack == "imitation", _imitation_row, lambda r: f"{r.dataset} {r.model}", True),
    "V": (lambda r: r.metric == "wilcoxon_z", lambda r: str(r.settings.get("comparison", "")), lambda r: r.dataset, False),
    "VI": (lambda r: r.metric == "self_asr", lambda r: str(r.settings.get("arch", "")), lambda r: r.dataset, False),
    "VII": (lambda r: r.metric == "asr" and r.attack in ("stats", "surrogate"), _surrogate_row, lambda r: f"{r.dataset} {r.model}", False),
    "VIII": (lambda r: r.metric == "alert_rate", lambda r: str(r.settings.get("setting", "")), lambda r: f"{r.dataset} {r.model}", False),
}


def table(records: Sequence[EvalRecord], table_id: str) -> list[list[str]]:
    """Pivot records into a table layout: first row is the header, cells are
    means (mean +- std for the imitation table) over users and seeds."""
    keep, row_of, col_of, with_std = TABLES[table_id]
    cells: dict[tuple[str, str], list[float]] = {}
    rows: list[str] = []
    cols: list[str] = []
    for r in records:
        if not keep(r):
            continue
        rk, ck = row_of(r), col_of(r)
        if rk not in rows:
            rows.append(rk)
        if ck not in cols:
            cols.append(ck)
        cells.setdefault((rk, ck), []).append(r.value)
    out = [["setting"] + cols]
    for rk in rows:
        out.append([rk] + [_fmt(cells.get((rk, ck), []), with_std) for ck in cols])
    return out


def write_table(records: Sequence[EvalRecord], table_id: str, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(table(records, table_id))


def vel_seqs(ts: Sequence[Trajectory], seqlen: int) -> list[RepSeq]:
    return [r for t in ts for r in ingest.to_rep(t, VEL, seqlen)]
