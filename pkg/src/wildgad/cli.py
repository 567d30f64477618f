"""Command-line pipeline: build-db, train-base, score, select, train-wild,
detect, eval, run and report.

Every subcommand takes ``--config PATH`` (a JSON file) and writes only under
the output directory (``--out`` or the config's ``output``). Failures exit
nonzero and print one JSON object ``{"error", "message", "stage"}`` on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment, continual, detectors, evaluation, featalign, selection
from .graphstore import AttributedGraph, GraphValidationError, load_dataset

log = logging.getLogger("wildgad")

STAGES = ("train-base", "score", "select", "train-wild", "detect", "eval")

DEFAULT_CONFIG = {
    "target": None,
    "raw_graphs": [],
    "database": None,
    "backbone": "oc",
    "output": "wildgad_out",
    "embedding": {"source": "none", "dim": 64, "seed": 0, "endpoint": None,
                  "model": featalign.DEFAULT_MODEL, "max_tokens": featalign.DEFAULT_MAX_TOKENS,
                  "batch_size": 32},
    "align": {"mode": "tabular", "template": None},
    "augment": {"ops": list(augment.OPS), "ratios": list(augment.DEFAULT_RATIOS), "base_seed": 0,
                "mask_mode": "zero", "include_target": False},
    "selection": {"eta": 0.5, "k": 1, "labeled": False, "projections": 128,
                  "energy": {"t": 1.0, "num_bins": 8, "max_sample": 2048}},
    "training": {"lr": 0.001, "epochs": 100, "beta": 0.5, "alpha": 0.5, "weight_decay": 1e-6,
                 "hidden_dim": 128, "embed_dim": 64, "ewc_strength": 1.0, "continual_lr": None,
                 "continual_epochs": None, "include_target": False, "fisher_damping": 1e-6},
    "seeds": {"base": 0, "runs": [0, 1, 2, 3, 4]},
    "sweep": False,
}


class PipelineError(Exception):
    def __init__(self, kind: str, message: str, stage: str | None = None, code: int = 1):
        super().__init__(message)
        self.kind, self.stage, self.code = kind, stage, code


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    raw: dict
    path: Path

    @classmethod
    def load(cls, path, out=None, seed=None) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise PipelineError("config_not_found", f"config file {path} does not exist", code=2)
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise PipelineError("config_invalid", f"{path}: {exc}", code=2) from None
        raw = _merge(DEFAULT_CONFIG, user)
        if out is not None:
            raw["output"] = str(out)
        if seed is not None:
            raw["seeds"]["base"] = int(seed)
            raw["seeds"]["runs"] = [int(seed)]
        if raw["backbone"] not in ("oc", "gae"):
            raise PipelineError("config_invalid", f"backbone must be 'oc' or 'gae', got {raw['backbone']!r}", code=2)
        if raw["embedding"]["source"] not in ("none", "fallback", "remote"):
            raise PipelineError("config_invalid", "embedding.source must be none, fallback or remote", code=2)
        env_endpoint = os.environ.get("WILDGAD_EMBED_ENDPOINT")
        if env_endpoint:
            raw["embedding"]["endpoint"] = env_endpoint
        return cls(raw, path)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self.path.parent / p)

    @property
    def out(self) -> Path:
        return self.resolve(self.raw["output"])

    @property
    def database(self) -> Path:
        db = self.raw.get("database")
        return self.resolve(db) if db else self.out / "db"

    @property
    def backbone(self) -> str:
        return self.raw["backbone"]

    def detector_config(self, seed: int):
        t = self.raw["training"]
        if self.backbone == "oc":
            return detectors.SvddConfig(beta=t["beta"], weight_decay=t["weight_decay"], lr=t["lr"],
                                        epochs=t["epochs"], seed=seed, hidden_dim=t["hidden_dim"],
                                        embed_dim=t["embed_dim"])
        return detectors.GaeConfig(alpha=t["alpha"], lr=t["lr"], epochs=t["epochs"], seed=seed,
                                   hidden_dim=t["hidden_dim"], embed_dim=t["embed_dim"])

    def continual_config(self, seed: int) -> continual.ContinualConfig:
        t = self.raw["training"]
        return continual.ContinualConfig(
            ewc_strength=t["ewc_strength"], lr=t["continual_lr"] or t["lr"],
            epochs=t["epochs"] if t["continual_epochs"] is None else t["continual_epochs"],
            seed=seed, include_target=t["include_target"], fisher_damping=t["fisher_damping"],
        )

    def selection_configs(self, seed: int):
        s = self.raw["selection"]
        e = s["energy"]
        return (selection.SelectionConfig(eta=s["eta"], k=s["k"], projections=s["projections"],
                                          labeled_mode=s["labeled"], seed=seed),
                selection.EnergyConfig(t=e["t"], num_bins=e["num_bins"], max_sample=e["max_sample"], seed=seed))

    def embedder(self):
        e = self.raw["embedding"]
        if e["source"] == "fallback":
            return featalign.FallbackEmbedder(e["dim"], e["seed"])
        if e["source"] == "remote":
            if not e.get("endpoint"):
                raise PipelineError("config_invalid", "remote embedding needs an endpoint", code=2)
            return featalign.RemoteEmbedder(e["endpoint"], e["model"], e["max_tokens"], e["batch_size"])
        return None


# ---------------------------------------------------------------- helpers


def _load_graph(path: Path, stage: str) -> AttributedGraph:
    if not path.exists():
        raise PipelineError("dataset_not_found", f"dataset directory {path} does not exist", stage, code=2)
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise PipelineError("dataset_not_found", str(exc), stage, code=2) from None
    except GraphValidationError as exc:
        raise PipelineError("dataset_invalid", str(exc), stage) from None


def _align(graph: AttributedGraph, path: Path, cfg: PipelineConfig) -> AttributedGraph:
    """Embed node attributes when an embedder is configured.

    Uses ``attributes.jsonl`` from the dataset directory when present;
    otherwise numeric feature columns are textualized as ``f0 .. f{d-1}``.
    """
    embedder = cfg.embedder()
    if embedder is None:
        return graph
    sidecar = path / "attributes.jsonl"
    mode = cfg.raw["align"]["mode"]
    pattern = cfg.raw["align"]["template"]
    if sidecar.is_file():
        attrs = featalign.load_node_attributes(sidecar)
    else:
        mode = "tabular"
        attrs = {i: {f"f{j}": float(v) for j, v in enumerate(row)} for i, row in enumerate(graph.features)}
        if pattern is None:
            pattern = "A node whose " + ", ".join(f"f{j} is {{f{j}}}" for j in range(graph.feature_dim)) + "."
    template = featalign.TextTemplate(pattern) if pattern else None
    return featalign.align_graph_features(graph, attrs, mode, template, embedder)


def _target(cfg: PipelineConfig, stage: str) -> AttributedGraph:
    if not cfg.raw.get("target"):
        raise PipelineError("config_invalid", "config has no 'target' dataset", stage, code=2)
    path = cfg.resolve(cfg.raw["target"])
    return _align(_load_graph(path, stage), path, cfg)


def _manifest(cfg: PipelineConfig, stage: str) -> augment.CandidateManifest:
    db = cfg.database / "db.json"
    if not db.is_file():
        raise PipelineError("database_not_found", f"no candidate database at {db}", stage, code=2)
    return augment.CandidateManifest.load(db)


def _run_dir(cfg: PipelineConfig, seed: int) -> Path:
    return cfg.out / "runs" / f"seed_{seed}"


def _require(paths, stage):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise PipelineError("missing_artifact", "missing: " + ", ".join(missing), stage)


# ---------------------------------------------------------------- stages


def cmd_build_db(cfg: PipelineConfig) -> augment.CandidateManifest:
    stage = "build-db"
    raws = []
    for p in cfg.raw["raw_graphs"]:
        path = cfg.resolve(p)
        raws.append(_align(_load_graph(path, stage), path, cfg))
    a = cfg.raw["augment"]
    if a["include_target"] and cfg.raw.get("target"):
        raws.append(_target(cfg, stage))
    if not raws:
        raise PipelineError("config_invalid", "no raw_graphs to build a database from", stage, code=2)
    try:
        return augment.build_candidate_db(raws, cfg.database, a["ratios"], a["ops"], a["base_seed"], a["mask_mode"])
    except ValueError as exc:
        raise PipelineError("database_invalid", str(exc), stage) from None


def stage_train_base(cfg, target, seed, run_dir):
    state = detectors.train_detector(target, cfg.backbone, cfg.detector_config(seed))
    detectors.save_state(state, run_dir / "base")
    return state


def stage_score(cfg, target, base, manifest, seed, run_dir):
    sel_cfg, energy_cfg = cfg.selection_configs(seed)
    try:
        scores = selection.score_candidates(target, base, manifest, sel_cfg, energy_cfg)
    except ValueError as exc:
        raise PipelineError("dimension_mismatch", str(exc), "score") from None
    selection.write_scores(run_dir / "scores.json", scores, [], target.name, cfg.backbone,
                           sel_cfg.eta, sel_cfg.k)
    return scores


def stage_select(cfg, target, scores, run_dir):
    k = cfg.raw["selection"]["k"]
    if k >= len(scores):
        log.warning("budget k=%d covers the whole pool of %d candidates; using all", k, len(scores))
    chosen = selection.select_topk(scores, k)
    selection.write_scores(run_dir / "scores.json", scores, chosen, target.name, cfg.backbone,
                           cfg.raw["selection"]["eta"], k)
    (run_dir / "selected.json").write_text(json.dumps({"selected": chosen}, indent=2) + "\n")
    return chosen


def stage_train_wild(cfg, target, base, manifest, chosen, seed, run_dir):
    graphs = [(cid, manifest.load_graph(cid)) for cid in chosen]
    ccfg = cfg.continual_config(seed)
    fisher = continual.fisher_diagonal(base, target, ccfg.fisher_batch_size, seed)
    try:
        result = continual.continue_training(base, graphs, ccfg, fisher=fisher, target=target)
    except detectors.DivergenceError as exc:
        raise PipelineError("divergence", str(exc), "train-wild") from None
    continual.write_train_log(run_dir / "train_log.csv", result.log)
    detectors.save_state(result.state, run_dir / "wild")
    return result.state


def stage_detect(state, target, run_dir, name="node_scores.csv"):
    scores = state.score(target)
    with open(run_dir / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, f"{s:.12g}"])
    return scores


def stage_eval(target, scores):
    if target.labels is None:
        raise PipelineError("labels_missing", "target has no labels to evaluate against", "eval")
    return evaluation.evaluate(scores, target.labels)


def _sweep(cfg, target, base, manifest, scores, seed, run_dir):
    """Continue training on each candidate alone and record the target AUC."""
    ccfg = cfg.continual_config(seed)
    fisher = continual.fisher_diagonal(base, target, ccfg.fisher_batch_size, seed)
    rows = []
    for s in sorted(scores, key=lambda s: s.candidate_id):
        res = continual.continue_training(base, [(s.candidate_id, manifest.load_graph(s.candidate_id))],
                                          ccfg, fisher=fisher, target=target)
        rows.append((s.candidate_id, s.J, evaluation.auc_roc(res.state.score(target), target.labels)))
    with open(run_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate_id", "J", "auc_roc"])
        for cid, J, auc in rows:
            w.writerow([cid, f"{J:.12g}", f"{auc:.12g}"])


def cmd_run(cfg: PipelineConfig, until: str | None = None) -> evaluation.EvalReport | None:
    """Full pipeline for every seed in ``seeds.runs``; writes report.json.

    The first run's scores.json, train_log.csv and sweep.csv (if any) are
    copied to the output root.
    """
    if until is not None and until not in STAGES:
        raise PipelineError("config_invalid", f"unknown stage {until!r}; expected one of {STAGES}", code=2)
    stop = STAGES.index(until) if until else len(STAGES) - 1
    target = _target(cfg, "train-base")
    manifest = _manifest(cfg, "score") if stop >= 1 else None
    runs = cfg.raw["seeds"]["runs"]
    base_reports, reports = [], []
    for seed in runs:
        run_dir = _run_dir(cfg, seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        base = stage_train_base(cfg, target, seed, run_dir)
        if stop < 1:
            continue
        scores = stage_score(cfg, target, base, manifest, seed, run_dir)
        if stop < 2:
            continue
        chosen = stage_select(cfg, target, scores, run_dir)
        if cfg.raw["sweep"]:
            _sweep(cfg, target, base, manifest, scores, seed, run_dir)
        if stop < 3:
            continue
        wild = stage_train_wild(cfg, target, base, manifest, chosen, seed, run_dir)
        if stop < 4:
            continue
        node_scores = stage_detect(wild, target, run_dir)
        base_scores = stage_detect(base, target, run_dir, "base_node_scores.csv")
        if stop < 5:
            continue
        reports.append(stage_eval(target, node_scores))
        base_reports.append(stage_eval(target, base_scores))

    first = _run_dir(cfg, runs[0])
    for name in ("scores.json", "train_log.csv", "sweep.csv", "selected.json"):
        if (first / name).is_file():
            (cfg.out / name).write_bytes((first / name).read_bytes())
    if not reports:
        return None
    report = evaluation.aggregate(reports)
    budget, labeled = cfg.raw["selection"]["k"], cfg.raw["selection"]["labeled"]
    evaluation.write_report(cfg.out / "report.json", report, target.name, cfg.backbone, budget, labeled)
    evaluation.write_report(cfg.out / "base_report.json", evaluation.aggregate(base_reports),
                            target.name, cfg.backbone, 0, labeled)
    return report


def cmd_stage(cfg: PipelineConfig, stage: str):
    """Run one stage for ``seeds.base`` using artifacts left by earlier stages."""
    seed = cfg.raw["seeds"]["base"]
    run_dir = _run_dir(cfg, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    target = _target(cfg, stage)
    if stage == "train-base":
        return stage_train_base(cfg, target, seed, run_dir)
    _require([run_dir / "base" / "checkpoint.json"], stage)
    base = detectors.load_state(run_dir / "base")
    if stage == "score":
        return stage_score(cfg, target, base, _manifest(cfg, stage), seed, run_dir)
    if stage == "select":
        _require([run_dir / "scores.json"], stage)
        return stage_select(cfg, target, selection.read_scores(run_dir / "scores.json"), run_dir)
    if stage == "train-wild":
        _require([run_dir / "selected.json"], stage)
        chosen = json.loads((run_dir / "selected.json").read_text())["selected"]
        return stage_train_wild(cfg, target, base, _manifest(cfg, stage), chosen, seed, run_dir)
    _require([run_dir / "wild" / "checkpoint.json"], stage)
    wild = detectors.load_state(run_dir / "wild")
    if stage == "detect":
        return stage_detect(wild, target, run_dir)
    if stage == "eval":
        report = stage_eval(target, wild.score(target))
        evaluation.write_report(run_dir / "report.json", report, target.name, cfg.backbone,
                                cfg.raw["selection"]["k"], cfg.raw["selection"]["labeled"])
        return report
    raise PipelineError("config_invalid", f"unknown stage {stage!r}", code=2)


def cmd_report(run_dir) -> str:
    """Summary table, sweep CSV passthrough and J-vs-AUC Pearson coefficient.

    Writes summary.txt and correlation.json into `run_dir`; a Pearson value
    that cannot be computed is reported as the string "undefined".
    """
    run_dir = Path(run_dir)
    needed = [run_dir / "report.json", run_dir / "scores.json"]
    missing = [p.name for p in needed if not p.is_file()]
    if missing:
        raise PipelineError("missing_artifact", "missing: " + ", ".join(missing), "report")
    report = json.loads((run_dir / "report.json").read_text())
    scores = json.loads((run_dir / "scores.json").read_text())
    lines = [
        f"dataset   {report['dataset']}",
        f"backbone  {report['backbone']}  budget {report['budget']}  labeled {report['labeled']}",
        f"AUC-ROC   {report['auc_roc_mean']:.4f} +/- {report['auc_roc_std']:.4f}  ({report['runs']} runs)",
        f"AUC-PR    {report['auc_pr_mean']:.4f} +/- {report['auc_pr_std']:.4f}",
    ]
    base_path = run_dir / "base_report.json"
    if base_path.is_file():
        base = json.loads(base_path.read_text())
        lines.append(f"base      AUC-ROC {base['auc_roc_mean']:.4f}  AUC-PR {base['auc_pr_mean']:.4f}")
    lines.append("")
    lines.append(f"{'candidate':<40} {'J':>10} {'s_sim_c':>10} {'s_sim_d':>10} {'s_div':>10}  selected")
    for c in scores["candidates"]:
        lines.append(f"{c['id']:<40} {c['J']:>10.4f} {c['s_sim_c']:>10.4g} {c['s_sim_d']:>10.4g} "
                     f"{c['s_div']:>10.4g}  {'*' if c['selected'] else ''}")

    pearson = "undefined"
    sweep = run_dir / "sweep.csv"
    if sweep.is_file():
        with open(sweep) as fh:
            rows = list(csv.DictReader(fh))
        J = np.array([float(r["J"]) for r in rows])
        auc = np.array([float(r["auc_roc"]) for r in rows])
        if len(rows) >= 2 and J.std() > 0 and auc.std() > 0:
            pearson = float(f"{np.corrcoef(J, auc)[0, 1]:.12g}")
        lines.append("")
        lines.append(f"sweep: {len(rows)} candidates, Pearson(J, AUC-ROC) = {pearson}")
    text = "\n".join(lines) + "\n"
    (run_dir / "summary.txt").write_text(text)
    (run_dir / "correlation.json").write_text(json.dumps({"pearson": pearson}, indent=2) + "\n")
    return text


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wildgad", description="Graph anomaly detection with selected external graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("build-db", *STAGES, "run", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--out", help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="override every run seed")
        if name == "run":
            p.add_argument("--stage", choices=STAGES, help="stop after this stage")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, args.out, args.seed)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.command == "build-db":
            manifest = cmd_build_db(cfg)
            print(f"wrote {len(manifest)} entries to {cfg.out / 'db' / 'db.json'}")
        elif args.command == "run":
            report = cmd_run(cfg, args.stage)
            if report is not None:
                print(f"AUC-ROC {report.auc_roc:.4f} +/- {report.auc_roc_std:.4f}  "
                      f"AUC-PR {report.auc_pr:.4f} +/- {report.auc_pr_std:.4f}")
        elif args.command == "report":
            print(cmd_report(cfg.out), end="")
        else:
            cmd_stage(cfg, args.command)
    except PipelineError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc), "stage": exc.stage}), file=sys.stderr)
        return exc.code
    except (featalign.EmbeddingError, featalign.TemplateError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "stage": args.command}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
