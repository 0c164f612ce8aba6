"""Embedding-based soft-matching evaluation over K sampling rounds.

SoftPass asks whether any hypothesis matches a ground-truth event, SoftRecall
what fraction of ground-truth events are matched, and ValidRatio what fraction
of all generated hypotheses are both relevant and non-redundant.

Scores are precomputed once per sample (``ScoreGrid``) so threshold sweeps and
per-K views never touch the embedder again. Metric values are fractions in
``[0, 1]``; the text renderer prints them as percentages.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DimensionMismatchError, InputError
from .validation import check_embeddings
from .vectors import as_ground_truth, unit_rows

MATCH_SWEEP = (0.70, 0.80, 0.90)
VALID_SWEEP = (0.40, 0.50, 0.60)
METRICS = ("SP", "SR", "VR")


@dataclass(frozen=True)
class EvaluationConfig:
    tau_sp: float = 0.8
    tau_sr: float = 0.8
    tau_valid: float = 0.4
    tau_dup: float = 0.8
    k: int = None  # rounds used; None means every round supplied
    m: int = None  # nominal hypotheses per round; None means the largest round

    def __post_init__(self):
        for name in ("tau_sp", "tau_sr", "tau_valid", "tau_dup"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {value}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScoreGrid:
    """Precomputed geometry for one sample's K rounds."""

    sample_id: str
    units: tuple  # per round: (m_k, d) unit-norm hypothesis embeddings
    gt_cos: tuple  # per round: (m_k, n_gt) raw cosines against ground truth

    @classmethod
    def build(cls, sample_id, rounds, ground_truth):
        gt = as_ground_truth(ground_truth)
        g_unit = unit_rows(gt.embeddings, "ground truth")
        units, gt_cos = [], []
        for k, r in enumerate(rounds):
            H = check_embeddings(r, f"round {k + 1}", allow_empty=True)
            if H.shape[0] == 0:
                H = np.zeros((0, gt.dim))
            elif H.shape[1] != gt.dim:
                raise DimensionMismatchError(f"round {k + 1} has dimension {H.shape[1]}, ground truth {gt.dim}")
            U = unit_rows(H, f"round {k + 1}") if H.shape[0] else H
            units.append(U)
            gt_cos.append(np.clip(U @ g_unit.T, -1.0, 1.0))
        if not units:
            raise InputError(f"sample {sample_id!r} has no rounds")
        return cls(str(sample_id), tuple(units), tuple(gt_cos))

    @property
    def n_rounds(self):
        return len(self.units)

    @property
    def n_ground_truth(self):
        return self.gt_cos[0].shape[1]

    def best_match(self):
        """Per round, the max cosine of each hypothesis to any ground-truth event."""
        return [c.max(axis=1) if c.shape[0] else np.zeros(0) for c in self.gt_cos]

    def subset(self, rounds):
        return ScoreGrid(self.sample_id, tuple(self.units[r] for r in rounds), tuple(self.gt_cos[r] for r in rounds))


def soft_pass(scores, tau_sp=0.8):
    """1 if any best-match score strictly exceeds ``tau_sp``, else 0."""
    flat = np.concatenate([np.ravel(s) for s in scores]) if len(scores) else np.zeros(0)
    return int(np.any(flat > tau_sp))


def soft_recall(ground_truth, hypotheses, tau_sr=0.8):
    """Fraction of ground-truth events whose best hypothesis match strictly exceeds ``tau_sr``."""
    gt = as_ground_truth(ground_truth)
    H = check_embeddings(hypotheses, "hypotheses", dim=gt.dim, allow_empty=True)
    if H.shape[0] == 0:
        return 0.0
    cos = unit_rows(H) @ unit_rows(gt.embeddings, "ground truth").T
    return _recall_from_cos([cos], tau_sr)


def _recall_from_cos(gt_cos, tau_sr):
    stacked = np.vstack(gt_cos)
    if stacked.shape[0] == 0:
        return 0.0
    return float(np.mean(stacked.max(axis=0) > tau_sr))


def valid_ratio(rounds, ground_truth, config=None):
    """Greedy relevance-and-novelty filter over rounds in generation order.

    Returns ``(ratio, flags)`` with one 0/1 array per round.
    """
    config = config or EvaluationConfig()
    grid = ScoreGrid.build("", rounds, ground_truth)
    return _valid_from_grid(grid, config)


def _valid_from_grid(grid, config):
    accepted = []
    flags = []
    for U, S in zip(grid.units, grid.best_match()):
        v = np.zeros(U.shape[0], dtype=np.int8)
        for i in range(U.shape[0]):
            if S[i] < config.tau_valid:
                continue
            if accepted and np.max(np.asarray(accepted) @ U[i]) > config.tau_dup:
                continue
            v[i] = 1
            accepted.append(U[i])
        flags.append(v)
    m = config.m or max((u.shape[0] for u in grid.units), default=0)
    denom = len(grid.units) * m
    ratio = float(sum(int(f.sum()) for f in flags) / denom) if denom else 0.0
    return ratio, flags


def _score_triplet(grid, config):
    sp = soft_pass(grid.best_match(), config.tau_sp)
    sr = _recall_from_cos(grid.gt_cos, config.tau_sr)
    vr, _ = _valid_from_grid(grid, config)
    return sp, sr, vr


@dataclass
class SampleEvaluation:
    sample_id: str
    config: EvaluationConfig
    scores: list = field(repr=False)
    soft_pass: int
    soft_recall: float
    valid_flags: list = field(repr=False)
    valid_ratio: float
    per_k: dict  # K -> (sp, sr, vr) on the first K rounds
    per_round: list  # (sp, sr, vr) for each round taken alone

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "soft_pass": self.soft_pass,
            "soft_recall": self.soft_recall,
            "valid_ratio": self.valid_ratio,
            "best_match": [s.tolist() for s in self.scores],
            "valid_flags": [f.tolist() for f in self.valid_flags],
            "per_k": {str(k): list(v) for k, v in sorted(self.per_k.items())},
            "per_round": [list(v) for v in self.per_round],
        }


def evaluate_sample(grid, config=None, ks=None):
    """Evaluate one precomputed grid at its full K plus every K in ``ks``."""
    config = config or EvaluationConfig()
    k_total = config.k or grid.n_rounds
    if k_total > grid.n_rounds:
        raise InputError(f"sample {grid.sample_id!r} has {grid.n_rounds} rounds, {k_total} requested")
    grid = grid.subset(range(k_total))
    ks = sorted(set(ks or ()) | {k_total})
    per_k = {}
    for k in ks:
        if not 1 <= k <= k_total:
            raise InputError(f"K={k} outside 1..{k_total}")
        per_k[k] = _score_triplet(grid.subset(range(k)), config)
    per_round = [_score_triplet(grid.subset([r]), config) for r in range(k_total)]
    vr, flags = _valid_from_grid(grid, config)
    scores = grid.best_match()
    return SampleEvaluation(
        sample_id=grid.sample_id,
        config=config,
        scores=scores,
        soft_pass=soft_pass(scores, config.tau_sp),
        soft_recall=_recall_from_cos(grid.gt_cos, config.tau_sr),
        valid_flags=flags,
        valid_ratio=vr,
        per_k=per_k,
        per_round=per_round,
    )


@dataclass
class MetricReport:
    label: str
    config: EvaluationConfig
    n_samples: int
    values: dict  # "SP@16" -> fraction
    k1_stats: dict  # "SP@1" -> (mean, std) over rounds taken independently
    samples: list = field(default_factory=list, repr=False)
    pass_at_k: dict = field(default_factory=dict)  # K -> fraction, from imported verdicts

    def with_pass_at_k(self, pass_at_k):
        return replace(self, pass_at_k=dict(pass_at_k))

    def row(self):
        """Flat machine-readable row: label plus one column per metric@K."""
        out = {"label": self.label, "n_samples": self.n_samples}
        for key, (mean, std) in self.k1_stats.items():
            out[key] = mean
            out[key + "_std"] = std
        out.update(self.values)
        for k, v in sorted(self.pass_at_k.items()):
            out[f"Pass@{k}"] = v
        return out

    def to_dict(self):
        return {
            "label": self.label,
            "config": self.config.to_dict(),
            "n_samples": self.n_samples,
            "values": self.values,
            "k1_stats": {k: list(v) for k, v in self.k1_stats.items()},
            "pass_at_k": {str(k): v for k, v in sorted(self.pass_at_k.items())},
            "samples": [s.to_dict() for s in self.samples],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            label=d["label"],
            config=EvaluationConfig(**d["config"]),
            n_samples=d["n_samples"],
            values=dict(d["values"]),
            k1_stats={k: tuple(v) for k, v in d["k1_stats"].items()},
            pass_at_k={int(k): v for k, v in d.get("pass_at_k", {}).items()},
        )


def metric_report(evaluations, ks=None, label=""):
    """Average per-sample scores into dataset-level metrics."""
    evaluations = list(evaluations)
    if not evaluations:
        raise InputError("cannot build a report from zero samples")
    config = evaluations[0].config
    mixed = [e.sample_id for e in evaluations if e.config != config]
    if mixed:
        raise InputError(f"samples evaluated under a different config: {mixed}")
    available = set.intersection(*(set(e.per_k) for e in evaluations))
    ks = sorted(available if ks is None else set(ks))
    missing = [k for k in ks if k not in available]
    if missing:
        raise InputError(f"K values {missing} were not evaluated for every sample")
    values = {}
    for k in ks:
        for j, name in enumerate(METRICS):
            values[f"{name}@{k}"] = _mean([e.per_k[k][j] for e in evaluations])
    if len({len(e.per_round) for e in evaluations}) != 1:
        raise InputError("samples differ in their number of rounds")
    n_rounds = len(evaluations[0].per_round)
    k1_stats = {}
    for j, name in enumerate(METRICS):
        per_round = [_mean([e.per_round[r][j] for e in evaluations]) for r in range(n_rounds)]
        k1_stats[f"{name}@1"] = (_mean(per_round), float(np.std(per_round)))
    return MetricReport(label, config, len(evaluations), values, k1_stats, samples=evaluations)


def _mean(xs):
    return math.fsum(xs) / len(xs)


def threshold_sweep(grids, k=None, match_taus=MATCH_SWEEP, valid_taus=VALID_SWEEP, base=None):
    """Metric@K across threshold grids, reusing precomputed scores.

    SoftPass and SoftRecall share the match threshold; ValidRatio sweeps its
    relevance threshold with the duplicate threshold held fixed.
    """
    base = base or EvaluationConfig()
    grids = list(grids)
    k = k or min(g.n_rounds for g in grids)
    sub = [g.subset(range(k)) for g in grids]
    match_rows = []
    for tau in match_taus:
        cfg = replace(base, tau_sp=tau, tau_sr=tau)
        match_rows.append({
            "tau": tau,
            f"SP@{k}": _mean([soft_pass(g.best_match(), cfg.tau_sp) for g in sub]),
            f"SR@{k}": _mean([_recall_from_cos(g.gt_cos, cfg.tau_sr) for g in sub]),
        })
    valid_rows = []
    for tau in valid_taus:
        cfg = replace(base, tau_valid=tau)
        valid_rows.append({"tau_valid": tau, f"VR@{k}": _mean([_valid_from_grid(g, cfg)[0] for g in sub])})
    return {"k": k, "match": match_rows, "valid": valid_rows}


def import_judge_verdicts(records, sample_ids, ks):
    """Pass@K from externally judged per-round verdicts.

    ``records`` is an iterable of ``{"sample_id": ..., "verdicts": [bool, ...]}``
    with one verdict per round.
    """
    seen = {}
    dupes = []
    for rec in records:
        sid = str(rec["sample_id"])
        if sid in seen:
            dupes.append(sid)
        seen[sid] = [bool(v) for v in rec["verdicts"]]
    if dupes:
        raise InputError(f"duplicate sample ids in verdicts: {sorted(set(dupes))}")
    missing = sorted(set(map(str, sample_ids)) - set(seen))
    if missing:
        raise InputError(f"verdicts missing for samples: {missing}")
    out = {}
    for k in ks:
        hits = [any(seen[str(s)][:k]) for s in sample_ids]
        out[k] = _mean(hits) if hits else 0.0
    return out


def load_verdicts(path):
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    return [rec for rec in lines if "sample_id" in rec]


def render_reports(reports, percent=True):
    """Aligned text table, one row per report."""
    rows = [r.row() for r in reports]
    columns = []
    for row in rows:
        columns.extend(c for c in row if c not in columns)
    cells = [[_fmt(row.get(c), percent and c not in ("label", "n_samples")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)
    return "\n".join(lines) + "\n"


def render_sweep(sweep, percent=True):
    k = sweep["k"]
    lines = [f"tau   SP@{k}    SR@{k}"]
    for row in sweep["match"]:
        lines.append(f"{row['tau']:.2f}  {_fmt(row[f'SP@{k}'], percent):>7}  {_fmt(row[f'SR@{k}'], percent):>7}")
    lines.append(f"tau_valid  VR@{k}")
    for row in sweep["valid"]:
        lines.append(f"{row['tau_valid']:.2f}       {_fmt(row[f'VR@{k}'], percent):>7}")
    return "\n".join(lines) + "\n"


def _fmt(value, percent):
    if value is None:
        return "-"
    if isinstance(value, str):
        return value
    if isinstance(value, int) and not percent:
        return str(value)
    return f"{100.0 * value:.2f}" if percent else f"{value:.4f}"


def write_embedding_csv(path, grids, evaluations, raw_rounds=None):
    """Hypothesis coordinates with validity flags, for external plotting.

    Writes the unit-normalized vectors unless ``raw_rounds`` (sample id ->
    list of round arrays) supplies the original ones.
    """
    by_id = {e.sample_id: e for e in evaluations}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = next((u.shape[1] for g in grids for u in g.units if u.size), 0)
        writer.writerow(["sample_id", "round", "index", "valid"] + [f"x{j}" for j in range(dim)])
        for g in grids:
            ev = by_id[g.sample_id]
            source = raw_rounds.get(g.sample_id) if raw_rounds else None
            for k, U in enumerate(g.units[: len(ev.valid_flags)]):
                vecs = np.asarray(source[k], dtype=np.float64) if source is not None else U
                for i in range(U.shape[0]):
                    writer.writerow([g.sample_id, k + 1, i, int(ev.valid_flags[k][i])] + [repr(float(x)) for x in vecs[i]])


class SoftMatchEvaluator(BaseEstimator):
    """Dataset-level soft-matching metrics.

    ``fit(X, y)`` takes, per sample, the list of K rounds of hypothesis
    embeddings (``X``) and the ground-truth event embeddings (``y``), and
    stores the per-sample evaluations and the aggregated ``report_``.
    """

    def __init__(self, tau_sp=0.8, tau_sr=0.8, tau_valid=0.4, tau_dup=0.8, ks=(1, 4, 8, 16), label=""):
        self.tau_sp = tau_sp
        self.tau_sr = tau_sr
        self.tau_valid = tau_valid
        self.tau_dup = tau_dup
        self.ks = ks
        self.label = label

    def _config(self):
        return EvaluationConfig(self.tau_sp, self.tau_sr, self.tau_valid, self.tau_dup)

    def fit(self, X, y, sample_ids=None):
        X, y = list(X), list(y)
        if len(X) != len(y):
            raise InputError(f"{len(X)} hypothesis sets for {len(y)} ground truths")
        ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(X))]
        self.grids_ = [ScoreGrid.build(s, r, g) for s, r, g in zip(ids, X, y)]
        k_max = min(g.n_rounds for g in self.grids_)
        ks = sorted(k for k in set(self.ks) if k <= k_max) or [k_max]
        config = replace(self._config(), k=k_max)
        self.evaluations_ = [evaluate_sample(g, config, ks) for g in self.grids_]
        self.report_ = metric_report(self.evaluations_, ks, label=self.label)
        return self

    def score(self, X=None, y=None):
        """SoftPass at the largest evaluated K."""
        check_is_fitted(self, "report_")
        if X is not None:
            return SoftMatchEvaluator(**self.get_params()).fit(X, y).score()
        k = max(self.evaluations_[0].per_k)
        return self.report_.values[f"SP@{k}"]

    def sweep(self, match_taus=MATCH_SWEEP, valid_taus=VALID_SWEEP):
        check_is_fitted(self, "grids_")
        return threshold_sweep(self.grids_, match_taus=match_taus, valid_taus=valid_taus, base=self._config())
