"""Experiment drivers: completeness, sampled qrels, judge alignment sweeps and
system-ranking agreement.  Every driver returns a :class:`Report` that can be
written as CSV, a JSON manifest and gnuplot-style plot data."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .corpus import load_catalog, load_interactions, read_qrels
from .corpus.trec import Qrels, RunSet, read_run
from .errors import NoPairsError, ValidationError
from .judge.backends import Backend
from .judge.cache import VerdictCache
from .judge.pipeline import RetryPolicy, judge_items
from .judge.prompts import ProfileSpec
from .metrics import PairFilter, agreement_triple, compatibility, judged_at_k, kendall_tau, weighted_kendall_tau
from .pooling import sample_qrels

_log = logging.getLogger(__name__)

FAILURE_FLAG_RATE = 0.10


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t confidence half-width (NaN for fewer than 2 values)."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean()) if len(x) else math.nan
    if len(x) < 2:
        return mean, math.nan
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return mean, 0.0
    return mean, float(stats.t.ppf(0.5 + confidence / 2, len(x) - 1) * sd / math.sqrt(len(x)))


@dataclass
class Report:
    name: str
    table: pd.DataFrame
    meta: dict = field(default_factory=dict)
    plot_columns: Optional[list] = None

    def write(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"csv": directory / f"{self.name}.csv", "manifest": directory / f"{self.name}.json"}
        self.table.to_csv(paths["csv"], index=False, lineterminator="\n", float_format="%.10g")
        manifest = {"report": self.name, "tool_version": __version__, **self.meta}
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        if self.plot_columns:
            paths["plot"] = directory / f"{self.name}.dat"
            with paths["plot"].open("w", encoding="utf-8", newline="\n") as fh:
                fh.write("# " + " ".join(self.plot_columns) + "\n")
                for row in self.table[self.plot_columns].itertuples(index=False):
                    fh.write(" ".join("nan" if pd.isna(v) else str(v) for v in row) + "\n")
        return paths


def score_systems(runs: Iterable[RunSet], qrels, metric: str = "compatibility", k: int = 100, p: float = 0.95) -> dict:
    """Aggregate metric value per system tag."""
    out = {}
    for run in runs:
        if metric == "compatibility":
            out[run.system_tag] = compatibility(run, qrels, p=p).aggregate
        elif metric == "judged":
            out[run.system_tag] = judged_at_k(run, qrels, k).aggregate
        else:
            raise ValidationError(f"unknown metric {metric!r}")
    return out


def completeness_comparison(
    runs: Sequence[RunSet], qrels_split, qrels_pooled, k: int = 100, pooled_systems: Optional[Iterable[str]] = None
) -> Report:
    """Judged@k of each system under split-derived and pooled qrels.

    ``pooled_systems`` names the runs that contributed to the pool; group
    averages are reported for them and for the rest.
    """
    pooled = set(pooled_systems) if pooled_systems is not None else {r.system_tag for r in runs}
    rows = []
    for run in runs:
        rows.append(
            {
                "system": run.system_tag,
                "group": "pooled" if run.system_tag in pooled else "not_pooled",
                f"judged@{k}_split": judged_at_k(run, qrels_split, k).aggregate,
                f"judged@{k}_pooled": judged_at_k(run, qrels_pooled, k).aggregate,
            }
        )
    table = pd.DataFrame(rows)
    averages = [
        {"system": "Average", "group": g, **sub.drop(columns=["system", "group"]).mean().to_dict()}
        for g, sub in table.groupby("group", sort=False)
    ]
    table = pd.concat([table, pd.DataFrame(averages)], ignore_index=True)
    return Report("completeness", table, {"k": k})


def _size_label(size) -> str:
    return "all" if size is None else str(size)


def sampled_qrels_sweep(
    runs: Sequence[RunSet],
    full_qrels: Qrels,
    sample_sizes: Sequence,
    seeds: Sequence[int],
    metric: str = "compatibility",
    k: int = 100,
    p: float = 0.95,
) -> Report:
    """Thin the qrels to ``size`` judgments per user and compare the resulting
    system ranking with the full-qrels ranking.

    A size of ``None`` (or ``"all"``) keeps every judgment.  Each row holds the
    mean and 95% half-width over seeds of Kendall's tau and of Judged@k.
    """
    if len(runs) < 2:
        raise ValidationError("ranking agreement needs at least two systems")
    sizes = [None if s in (None, "all") else int(s) for s in sample_sizes]
    finite = [s for s in sizes if s is not None]
    if finite != sorted(finite) or (None in sizes and sizes[-1] is not None):
        raise ValidationError("sample sizes must be ascending, with 'all' last")
    full_scores = score_systems(runs, full_qrels, metric, k, p)
    detail, rows = [], []
    for size in sizes:
        taus, judged = [], []
        for seed in seeds:
            sampled = full_qrels if size is None else sample_qrels(full_qrels, size, seed)
            scores = score_systems(runs, sampled, metric, k, p)
            tau = kendall_tau(full_scores, scores)
            jk = float(np.mean([judged_at_k(r, sampled, k).aggregate for r in runs]))
            taus.append(tau)
            judged.append(jk)
            detail.append({"size": _size_label(size), "seed": seed, "tau": tau, f"judged@{k}": jk})
        tau_m, tau_ci = mean_ci(taus)
        j_m, j_ci = mean_ci(judged)
        rows.append(
            {
                "size": _size_label(size),
                "tau_mean": tau_m,
                "tau_ci95": tau_ci,
                f"judged@{k}_mean": j_m,
                f"judged@{k}_ci95": j_ci,
                "n_seeds": len(seeds),
            }
        )
    return Report(
        "sampled_qrels_sweep",
        pd.DataFrame(rows),
        {"metric": metric, "k": k, "p": p, "seeds": list(seeds), "detail": detail, "full_scores": full_scores},
        plot_columns=["size", "tau_mean", "tau_ci95", f"judged@{k}_mean", f"judged@{k}_ci95"],
    )


def _triple_row(triples) -> dict:
    row = {}
    for name in ("agreement", "tie", "disagreement"):
        m, ci = mean_ci([getattr(t, name) for t in triples])
        row[name] = m
        row[f"{name}_ci95"] = ci
    row["pairs"] = int(np.mean([t.pair_count for t in triples])) if triples else 0
    return row


def _judge_sweep(
    name: str,
    param: str,
    values: Sequence,
    make_spec,
    pairs,
    backend: Backend,
    history,
    catalog,
    human: Qrels,
    repetitions: int,
    pair_filter: Optional[PairFilter],
    rubric: str,
    aggregation: str,
    cache: Optional[VerdictCache],
    max_in_flight: int,
    retry: Optional[RetryPolicy],
) -> Report:
    rows = []
    cache = cache if cache is not None else VerdictCache()
    for value in values:
        spec = make_spec(value)
        run = judge_items(
            pairs, backend, history, catalog, spec, rubric, repetitions, aggregation, cache, max_in_flight, retry
        )
        triples = []
        for q in run.qrels:
            try:
                triples.append(agreement_triple(human, q, pair_filter))
            except NoPairsError:
                _log.warning("%s=%s: a repetition produced no qualifying pairs", param, value)
        row = {param: value if not isinstance(value, tuple) else "+".join(value), **_triple_row(triples)}
        row["failure_rate"] = run.failure_rate
        row["flagged"] = run.failure_rate > FAILURE_FLAG_RATE
        rows.append(row)
    return Report(
        name,
        pd.DataFrame(rows),
        {"repetitions": repetitions, "rubric": rubric, "aggregation": aggregation, "backend": backend.identity},
        plot_columns=None,
    )


def metadata_ablation(
    pairs,
    backend: Backend,
    history,
    catalog,
    human: Qrels,
    field_sets: Sequence[Sequence[str]],
    repetitions: int = 3,
    base_spec: Optional[ProfileSpec] = None,
    pair_filter: Optional[PairFilter] = None,
    rubric: str = "none",
    aggregation: str = "cot_overall",
    cache: Optional[VerdictCache] = None,
    max_in_flight: int = 4,
    retry: Optional[RetryPolicy] = None,
) -> Report:
    """Agreement triple (mean and 95% half-width over repetitions) for each
    metadata field set shown to the judge."""
    base_spec = base_spec or ProfileSpec()
    for fs in field_sets:
        if "title" not in fs:
            raise ValidationError(f"field set {fs} lacks title")
    canon = [ProfileSpec(fields=tuple(fs)).fields for fs in field_sets]
    return _judge_sweep(
        "metadata_ablation", "fields", canon, lambda fs: replace(base_spec, fields=fs),
        pairs, backend, history, catalog, human, repetitions, pair_filter, rubric, aggregation,
        cache, max_in_flight, retry,
    )


def history_size_sweep(
    pairs,
    backend: Backend,
    history,
    catalog,
    human: Qrels,
    sizes: Sequence[int],
    repetitions: int = 3,
    base_spec: Optional[ProfileSpec] = None,
    pair_filter: Optional[PairFilter] = None,
    rubric: str = "none",
    aggregation: str = "cot_overall",
    cache: Optional[VerdictCache] = None,
    max_in_flight: int = 4,
    retry: Optional[RetryPolicy] = None,
) -> Report:
    """Agreement triple per profile history size."""
    base_spec = base_spec or ProfileSpec()
    report = _judge_sweep(
        "history_size_sweep", "history_size", list(sizes), lambda n: replace(base_spec, history_size=int(n)),
        pairs, backend, history, catalog, human, repetitions, pair_filter, rubric, aggregation,
        cache, max_in_flight, retry,
    )
    report.plot_columns = ["history_size", "agreement", "agreement_ci95", "tie", "tie_ci95",
                           "disagreement", "disagreement_ci95"]
    return report


def grade_gap_sweep(human: Qrels, judged: Qrels, gaps: Sequence[int] = range(1, 8)) -> Report:
    """Agreement triple restricted to human pairs at least ``gap`` grades apart.

    Gaps with no qualifying pair are reported with NaN proportions.
    """
    rows = []
    for gap in gaps:
        if not 1 <= gap <= 7:
            raise ValidationError(f"gap {gap} outside [1, 7]")
        try:
            t = agreement_triple(human, judged, PairFilter("min_grade_gap", gap))
            rows.append({"gap": gap, **asdict(t)})
        except NoPairsError:
            rows.append({"gap": gap, "agreement": math.nan, "tie": math.nan, "disagreement": math.nan,
                         "pair_count": 0})
    return Report("grade_gap_sweep", pd.DataFrame(rows), {},
                  plot_columns=["gap", "agreement", "tie", "disagreement"])


@dataclass
class RankingAgreementReport:
    budget: Optional[int]
    scores_a: dict
    scores_b: dict
    tau: float
    weighted_tau: float
    flagged: bool = False

    @property
    def scatter(self) -> list[tuple[str, float, float]]:
        return [(s, self.scores_a[s], self.scores_b[s]) for s in sorted(self.scores_a)]

    def recompute(self) -> tuple[float, float]:
        return kendall_tau(self.scores_a, self.scores_b), weighted_kendall_tau(self.scores_a, self.scores_b)


def ranking_agreement(
    runs: Sequence[RunSet],
    qrels_human,
    qrels_judge: Qrels,
    metric: str = "compatibility",
    budgets: Sequence = (10, 50, 100, 200),
    seed: int = 0,
    k: int = 100,
    p: float = 0.95,
) -> tuple[Report, list]:
    """Compare system rankings under human qrels and budget-limited judge qrels.

    For each per-user budget the judge qrels are thinned by a seeded uniform
    sample; ``None`` keeps everything.  Returns a summary report and one
    :class:`RankingAgreementReport` per budget.
    """
    if len(runs) < 2:
        raise ValidationError("ranking agreement needs at least two systems")
    human_scores = score_systems(runs, qrels_human, metric, k, p)
    fewest = min((len(qrels_judge.for_user(u)) for u in qrels_judge.users()), default=0)
    details, rows, scatter = [], [], []
    for budget in budgets:
        budget = None if budget in (None, "all") else int(budget)
        sampled = qrels_judge if budget is None else sample_qrels(qrels_judge, budget, seed)
        judge_scores = score_systems(runs, sampled, metric, k, p)
        flagged = budget is not None and budget > fewest
        rep = RankingAgreementReport(
            budget, human_scores, judge_scores,
            kendall_tau(human_scores, judge_scores), weighted_kendall_tau(human_scores, judge_scores), flagged,
        )
        details.append(rep)
        rows.append({"budget": _size_label(budget), "tau": rep.tau, "weighted_tau": rep.weighted_tau,
                     "judgments": len(sampled), "flagged": flagged})
        scatter.extend({"budget": _size_label(budget), "system": s, "score_human": a, "score_judge": b}
                       for s, a, b in rep.scatter)
    report = Report("ranking_agreement", pd.DataFrame(rows),
                    {"metric": metric, "k": k, "p": p, "seed": seed, "scatter": scatter},
                    plot_columns=["budget", "tau", "weighted_tau"])
    return report, details


@dataclass
class ExperimentSpec:
    """A serialized experiment: which driver, its inputs and parameters."""

    name: str
    kind: str
    inputs: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    params: dict = field(default_factory=dict)

    KINDS = ("completeness", "sampled_qrels", "ranking_agreement", "grade_gap",
             "metadata_ablation", "history_size")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}")
        values = self.sweep.get("values", [])
        if len({json.dumps(v, sort_keys=True) for v in values}) != len(values):
            raise ValidationError("sweep values must be distinct")

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        spec = cls(**data)
        base = path.parent
        spec.inputs = {k: _resolve(base, v) for k, v in spec.inputs.items()}
        return spec

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True, default=str).encode()).hexdigest()


def _resolve(base: Path, value):
    if isinstance(value, list):
        return [_resolve(base, v) for v in value]
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def _expand_runs(spec_value) -> list[RunSet]:
    paths = spec_value if isinstance(spec_value, list) else [spec_value]
    files = []
    for pattern in paths:
        matched = sorted(Path(pattern).parent.glob(Path(pattern).name))
        files.extend(matched or [Path(pattern)])
    return [read_run(f) for f in files]


def run_experiment(spec: ExperimentSpec, backend: Optional[Backend] = None) -> Report:
    """Execute an :class:`ExperimentSpec` whose inputs are file paths."""
    for key, value in spec.inputs.items():
        for v in value if isinstance(value, list) else [value]:
            if "*" not in v and not Path(v).exists():
                raise FileNotFoundError(f"input {key}: {v} does not exist")
    prm = spec.params
    values = spec.sweep.get("values", [])
    k, p = int(prm.get("k", 100)), float(prm.get("p", 0.95))
    if spec.kind == "completeness":
        report = completeness_comparison(
            _expand_runs(spec.inputs["runs"]), read_qrels(spec.inputs["qrels_split"]),
            read_qrels(spec.inputs["qrels_pooled"]), k, prm.get("pooled_systems"),
        )
    elif spec.kind == "sampled_qrels":
        report = sampled_qrels_sweep(
            _expand_runs(spec.inputs["runs"]), read_qrels(spec.inputs["qrels"]), values, spec.seeds,
            prm.get("metric", "compatibility"), k, p,
        )
    elif spec.kind == "ranking_agreement":
        report, _ = ranking_agreement(
            _expand_runs(spec.inputs["runs"]), read_qrels(spec.inputs["qrels_human"]),
            read_qrels(spec.inputs["qrels_judge"], max_grade=int(prm.get("max_grade", 7))),
            prm.get("metric", "compatibility"), values or (10, 50, 100, 200), spec.seeds[0], k, p,
        )
    elif spec.kind == "grade_gap":
        report = grade_gap_sweep(read_qrels(spec.inputs["qrels_human"]), read_qrels(spec.inputs["qrels_judge"]),
                                 values or range(1, 8))
    else:
        if backend is None:
            raise ValidationError(f"{spec.kind} experiments need a judge backend")
        human = read_qrels(spec.inputs["qrels_human"])
        history = load_interactions(spec.inputs["interactions"])
        catalog = load_catalog(spec.inputs["catalog"])
        base = ProfileSpec(seed=spec.seeds[0], history_size=int(prm.get("history_size", 1000)))
        cache = VerdictCache(spec.inputs.get("cache"))
        args = dict(repetitions=int(prm.get("repetitions", 3)), base_spec=base,
                    rubric=prm.get("rubric", "none"), aggregation=prm.get("aggregation", "cot_overall"),
                    cache=cache)
        pairs = [key for key, _ in human.pairs()]
        if spec.kind == "metadata_ablation":
            report = metadata_ablation(pairs, backend, history, catalog, human, values, **args)
        else:
            report = history_size_sweep(pairs, backend, history, catalog, human, values, **args)
    report.name = spec.name
    report.meta.update({"spec_sha256": spec.digest(), "seeds": spec.seeds, "kind": spec.kind})
    return report
