"""Command-line entry point.

Settings resolve as defaults < ``--config`` JSON file < explicit flags. All
randomness derives from ``--seed`` through named sub-streams.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import InputError, NumericError, ScatterError, TransportError
from .gateway import (
    ENDPOINT_ENV,
    EmbeddingCache,
    EmbeddingClient,
    RunStore,
    atomic_write_text,
    canonical_json,
    checkpoint_dict,
    config_fingerprint,
    embed_texts,
    load_hypotheses,
    load_samples,
    load_verdicts,
)
from .metrics import (
    MATCH_SWEEP,
    VALID_SWEEP,
    EvaluationConfig,
    MetricReport,
    ScoreGrid,
    evaluate_sample,
    import_judge_verdicts,
    metric_report,
    render_reports,
    render_sweep,
    threshold_sweep,
    write_embedding_csv,
)
from .rewards import REWARD_PRESETS, GateMode, ResponseGroup, RewardConfig, Rollout, compute_rewards
from .synthetic import ToyPolicy, ToyTrainConfig, evaluate_policy, train

log = logging.getLogger("scatterkit")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_TRANSPORT = 3
EXIT_NUMERIC = 4

DEFAULTS = {
    "score": {
        "reward": "scatter", "gate": "full", "epsilon": 1e-8,
        "embedder": None, "endpoint": None, "cache": ".scatterkit-cache", "offline": False, "jobs": 1,
    },
    "evaluate": {
        "tau_sp": 0.8, "tau_sr": 0.8, "tau_valid": 0.4, "tau_dup": 0.8, "ks": "1,4,8,16", "m": None,
        "label": "", "sweep": False, "verdicts": None, "export_embeddings": None,
        "embedder": None, "endpoint": None, "cache": ".scatterkit-cache", "offline": False, "jobs": 1,
    },
    "sweep": {
        "tau_dup": 0.8, "k": None, "match_taus": ",".join(map(str, MATCH_SWEEP)),
        "valid_taus": ",".join(map(str, VALID_SWEEP)),
        "embedder": None, "endpoint": None, "cache": ".scatterkit-cache", "offline": False, "jobs": 1,
    },
    "train-toy": {
        **{f.name: f.default for f in fields(ToyTrainConfig)},
        "seeds": 1, "store": "runs", "run_id": None, "overwrite": False, "jobs": 1,
    },
    "report": {"format": "text", "runs": None},
}


def _csv_floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _csv_ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _add_embedding_flags(p):
    g = p.add_argument_group("embedding")
    g.add_argument("--embedder", help="embedder id used as the cache namespace")
    g.add_argument("--endpoint", help=f"embedding service URL (default: ${ENDPOINT_ENV})")
    g.add_argument("--cache", help="embedding cache directory (default: .scatterkit-cache)")
    g.add_argument("--offline", action="store_const", const=True, help="serve embeddings from the cache only")
    g.add_argument("--jobs", type=int, help="samples processed in parallel")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scatterkit",
        description="Score, evaluate, and train with diversity-aware group-relative rewards.",
        epilog=f"Environment: {ENDPOINT_ENV} sets the default embedding endpoint.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="reward breakdown for every (sample, rollout)")
    p.add_argument("--samples", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--out", required=True, help="output JSONL file")
    p.add_argument("--config")
    p.add_argument("--reward", choices=sorted(REWARD_PRESETS))
    p.add_argument("--gate", choices=[g.value for g in GateMode])
    p.add_argument("--epsilon", type=float)
    _add_embedding_flags(p)

    p = sub.add_parser("evaluate", help="SoftPass / SoftRecall / ValidRatio report")
    p.add_argument("--samples", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--label")
    p.add_argument("--tau-sp", type=float)
    p.add_argument("--tau-sr", type=float)
    p.add_argument("--tau-valid", type=float)
    p.add_argument("--tau-dup", type=float)
    p.add_argument("--ks", help="comma-separated K values")
    p.add_argument("--m", type=int, help="nominal hypotheses per round (ValidRatio denominator)")
    p.add_argument("--verdicts", help="judge verdict JSONL for Pass@K")
    p.add_argument("--sweep", action="store_const", const=True, help="also write the threshold sweep")
    p.add_argument("--export-embeddings", help="CSV path for hypothesis coordinates")
    _add_embedding_flags(p)

    p = sub.add_parser("sweep", help="metrics across threshold grids")
    p.add_argument("--samples", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--k", type=int)
    p.add_argument("--tau-dup", type=float)
    p.add_argument("--match-taus")
    p.add_argument("--valid-taus")
    _add_embedding_flags(p)

    p = sub.add_parser("train-toy", help="train the toy policy on the synthetic world")
    p.add_argument("--config")
    p.add_argument("--reward", choices=sorted(REWARD_PRESETS))
    p.add_argument("--gate", choices=[g.value for g in GateMode])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--updates-per-step", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--n-hypotheses", type=int)
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--kl-coef", type=float)
    p.add_argument("--clip-epsilon", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-modes", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--n-distractors", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--store")
    p.add_argument("--run-id")
    p.add_argument("--overwrite", action="store_const", const=True)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("report", help="render stored reports as one table")
    p.add_argument("--store", help="run store directory (reads results.jsonl)")
    p.add_argument("--reports", nargs="*", help="report.json files")
    p.add_argument("--runs", nargs="*", help="restrict to these run ids")
    p.add_argument("--format", choices=["text", "csv", "json"])
    return parser


def resolve(args):
    """Merge defaults, the optional config file, and explicit flags."""
    settings = dict(DEFAULTS[args.command])
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(settings)
        if unknown:
            raise InputError(f"{config_path}: unknown settings {sorted(unknown)}")
        settings.update(from_file)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            settings[key] = value
    return settings


def _embedder(settings):
    cache = EmbeddingCache(settings["cache"])
    client = None
    if settings["embedder"] and not settings["offline"]:
        endpoint = settings["endpoint"]
        try:
            client = EmbeddingClient.from_endpoint(settings["embedder"], endpoint)
        except InputError:
            client = None
    return cache, client


def _materialize(sample, batches, settings, cache, client):
    """Ground truth and per-round hypothesis embeddings for one sample."""

    def vectors(texts, inline):
        if inline is not None:
            return np.asarray(inline, dtype=np.float64).reshape(len(texts), -1) if texts else np.zeros((0, 0))
        if not settings["embedder"]:
            raise InputError(f"sample {sample.id!r} has no inline embeddings and no --embedder was given")
        return embed_texts(texts, cache, client, embedder=settings["embedder"], offline=settings["offline"])

    gt = vectors(sample.ground_truth, sample.ground_truth_embeddings)
    rounds = [vectors(b.hypotheses, b.embeddings) for b in batches]
    return gt, rounds, [list(b.hypotheses) for b in batches]


def _load_inputs(settings):
    samples = load_samples(settings["samples"])
    hyps = load_hypotheses(settings["hypotheses"])
    missing = [s.id for s in samples if s.id not in hyps]
    if missing:
        raise InputError(f"no hypotheses for samples {missing}")
    orphans = sorted(set(hyps) - {s.id for s in samples})
    if orphans:
        raise InputError(f"hypotheses for unknown samples {orphans}")
    return sorted(samples, key=lambda s: s.id), hyps


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_score(settings):
    samples, hyps = _load_inputs(settings)
    cache, client = _embedder(settings)
    config = RewardConfig.preset(settings["reward"], gate=settings["gate"], epsilon=float(settings["epsilon"]))

    def score(sample):
        gt, rounds, texts = _materialize(sample, hyps[sample.id], settings, cache, client)
        rollouts = tuple(Rollout(r, texts=t, index=k) for k, (r, t) in enumerate(zip(rounds, texts)))
        return sample.id, compute_rewards(ResponseGroup(rollouts, gt, sample.id), config)

    rows = [{"schema": "scatterkit/rewards", "version": 1, "config": config.to_dict()}]
    for sid, breakdowns in _map(score, samples, settings["jobs"]):
        for b in breakdowns:
            rows.append({"sample_id": sid, **b.to_dict()})
    atomic_write_text(settings["out"], "".join(canonical_json(r) + "\n" for r in rows))
    log.info("scored %d samples into %s", len(samples), settings["out"])
    return EXIT_OK


def _grids(settings):
    samples, hyps = _load_inputs(settings)
    cache, client = _embedder(settings)

    def build(sample):
        gt, rounds, _ = _materialize(sample, hyps[sample.id], settings, cache, client)
        return ScoreGrid.build(sample.id, rounds, gt), rounds

    built = _map(build, samples, settings["jobs"])
    return [g for g, _ in built], {g.sample_id: r for g, r in built}


def cmd_evaluate(settings):
    grids, raw = _grids(settings)
    k_max = min(g.n_rounds for g in grids)
    config = EvaluationConfig(
        float(settings["tau_sp"]), float(settings["tau_sr"]), float(settings["tau_valid"]),
        float(settings["tau_dup"]), k=k_max, m=settings["m"],
    )
    ks = sorted(k for k in set(_csv_ints(settings["ks"])) if k <= k_max) or [k_max]
    evaluations = [evaluate_sample(g, config, ks) for g in grids]
    report = metric_report(evaluations, ks, label=settings["label"])
    if settings["verdicts"]:
        report = report.with_pass_at_k(import_judge_verdicts(load_verdicts(settings["verdicts"]), [g.sample_id for g in grids], ks))
    out = Path(settings["out_dir"])
    _write_report(out, report)
    if settings["sweep"]:
        _write_sweep(out, threshold_sweep(grids, k=k_max, base=config))
    if settings["export_embeddings"]:
        write_embedding_csv(settings["export_embeddings"], grids, evaluations, raw)
    sys.stdout.write(render_reports([report]))
    return EXIT_OK


def _write_report(out, report):
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", canonical_json(report.to_dict()) + "\n")
    atomic_write_text(out / "metrics.json", canonical_json([report.row()]) + "\n")
    atomic_write_text(out / "report.txt", render_reports([report]))


def _write_sweep(out, sweep):
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "sweep.json", canonical_json(sweep) + "\n")
    atomic_write_text(out / "sweep.txt", render_sweep(sweep))


def cmd_sweep(settings):
    grids, _ = _grids(settings)
    base = EvaluationConfig(tau_dup=float(settings["tau_dup"]))
    sweep = threshold_sweep(
        grids, k=settings["k"], match_taus=_csv_floats(settings["match_taus"]),
        valid_taus=_csv_floats(settings["valid_taus"]), base=base,
    )
    _write_sweep(Path(settings["out_dir"]), sweep)
    sys.stdout.write(render_sweep(sweep))
    return EXIT_OK


def run_toy(config):
    """Train and evaluate one seed; returns JSON-ready artifacts."""
    universe = config.universe()
    policy = ToyPolicy.uniform(config.vocab_size, config.train_temperature)
    run = train(universe, policy, config)
    evaluation = evaluate_policy(
        run.policy, universe, config.n_rounds, config.n_hypotheses,
        seed=config.seed, temperature=config.eval_temperature,
    )
    report = replace(evaluation.report, label=f"{config.reward}/{config.gate}/seed{config.seed}", samples=[])
    cfg = config.to_dict()
    return {
        "config.json": cfg,
        "logs.jsonl": run.logs,
        "checkpoint.json": checkpoint_dict(run.policy.logits, cfg),
        "evaluation.json": evaluation.to_dict(),
        "metrics.json": [{**report.row(), "modes_hit": evaluation.modes_hit}],
        "report.txt": render_reports([report]),
    }


def cmd_train_toy(settings):
    names = {f.name for f in fields(ToyTrainConfig)}
    base = ToyTrainConfig(**{k: v for k, v in settings.items() if k in names})
    configs = [replace(base, seed=base.seed + i) for i in range(int(settings["seeds"]))]
    prefix = settings["run_id"] or f"{base.reward}-{base.gate}"
    store = RunStore(settings["store"])
    run_ids = [f"{prefix}-seed{c.seed}" for c in configs]
    if not settings["overwrite"]:
        taken = [r for r in run_ids if store.exists(r)]
        if taken:
            raise InputError(f"run ids already exist: {taken} (use --overwrite)")
    jobs = int(settings["jobs"] or 1)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_toy, configs))
    else:
        results = [run_toy(c) for c in configs]
    rows = []
    for run_id, config, artifacts in zip(run_ids, configs, results):
        store.persist(run_id, artifacts, config.to_dict(), overwrite=bool(settings["overwrite"]))
        row = {"run_id": run_id, "fingerprint": config_fingerprint(config.to_dict()), **artifacts["metrics.json"][0]}
        store.append_result(row)
        rows.append(row)
    sys.stdout.write(_render_rows(rows))
    return EXIT_OK


def _render_rows(rows):
    reports = []
    for r in rows:
        values = {k: v for k, v in r.items() if "@" in k and not k.endswith("_std") and not k.endswith("@1")}
        k1 = {k: (r[k], r.get(k + "_std", 0.0)) for k in r if k.endswith("@1")}
        rep = MetricReport(r.get("run_id") or r.get("label", ""), EvaluationConfig(), r.get("n_samples", 1), values, k1)
        reports.append(rep)
    text = render_reports(reports)
    if any("modes_hit" in r for r in rows):
        text += "modes hit: " + ", ".join(f"{r.get('run_id', r.get('label'))}={r.get('modes_hit')}" for r in rows) + "\n"
    return text


def cmd_report(settings):
    rows = []
    if settings.get("store"):
        rows.extend(RunStore(settings["store"]).results())
    for path in settings.get("reports") or []:
        with open(path, encoding="utf-8") as fh:
            rows.append(MetricReport.from_dict(json.load(fh)).row())
    if settings.get("runs"):
        wanted = set(settings["runs"])
        rows = [r for r in rows if r.get("run_id") in wanted]
    if not rows:
        raise InputError("nothing to report")
    fmt = settings["format"]
    if fmt == "json":
        sys.stdout.write(canonical_json(rows) + "\n")
    elif fmt == "csv":
        import csv

        columns = []
        for r in rows:
            columns.extend(c for c in r if c not in columns)
        writer = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        sys.stdout.write(_render_rows(rows))
    return EXIT_OK


COMMANDS = {
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "train-toy": cmd_train_toy,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](resolve(args))
    except TransportError as exc:
        print(f"scatterkit: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except NumericError as exc:
        print(f"scatterkit: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, json.JSONDecodeError) as exc:
        print(f"scatterkit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScatterError as exc:
        print(f"scatterkit: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
