"""End-to-end orchestration and report emission.

Each ``stage_*`` function reads and writes the same on-disk artifacts the CLI
subcommands use, and :func:`run_pipeline` chains them, so running stages one
by one reproduces the pipeline output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import SENSOR_GROUPS, PickState, SplitAssignment, parse_groups
from .dataset import AugmentConfig, WindowingConfig, augment_split, build_window_table, split_trials
from .evaluation import GROUP_NAMES, STATE_NAMES, EvaluationReport, ablate_sensor_subsets, evaluate_model
from .forest import ForestConfig, ForestModel, train_forest
from .io import WindowTable, read_corpus, read_json, write_corpus, write_json
from .mlp import MlpConfig, MlpModel, train_mlp
from .preprocess import PreprocessConfig, preprocess_corpus
from .simulator import SimConfig, generate_corpus

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    n_success: int = 72
    n_fail: int = 11
    sim: SimConfig = field(default_factory=SimConfig)
    prep: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    split_fractions: tuple = (0.8, 0.1, 0.1)
    n_repeats: int = 10
    debounce_k: int = 2
    out_dir: str = "pickstate_out"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_success": self.n_success,
            "n_fail": self.n_fail,
            "sim": self.sim.to_dict(),
            "prep": self.prep.to_dict(),
            "augment": self.augment.to_dict(),
            "windowing": self.windowing.to_dict(),
            "forest": self.forest.to_dict(),
            "mlp": self.mlp.to_dict(),
            "split_fractions": list(self.split_fractions),
            "n_repeats": self.n_repeats,
            "debounce_k": self.debounce_k,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base = cls()
        d = dict(d)
        d.pop("config_digest", None)  # stamped copies of a config stay loadable
        kw = {}
        if "sim" in d:
            kw["sim"] = SimConfig.from_dict({**base.sim.to_dict(), **d.pop("sim")})
        if "prep" in d:
            kw["prep"] = PreprocessConfig(**{**base.prep.to_dict(), **d.pop("prep")})
        if "augment" in d:
            kw["augment"] = AugmentConfig(**{**base.augment.to_dict(), **d.pop("augment")})
        if "windowing" in d:
            kw["windowing"] = WindowingConfig(**{**base.windowing.to_dict(), **d.pop("windowing")})
        if "forest" in d:
            kw["forest"] = ForestConfig(**{**base.forest.to_dict(), **d.pop("forest")})
        if "mlp" in d:
            kw["mlp"] = MlpConfig.from_dict({**base.mlp.to_dict(), **d.pop("mlp")})
        if "split_fractions" in d:
            kw["split_fractions"] = tuple(d.pop("split_fractions"))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d, **kw)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical config JSON; the output directory is excluded."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_digest": self.digest, "seed": self.seed}


def load_config(path=None, **overrides) -> PipelineConfig:
    cfg = PipelineConfig.from_dict(read_json(path)) if path else PipelineConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "hard" in overrides:
        cfg = replace(cfg, sim=replace(cfg.sim, hard=bool(overrides.pop("hard"))))
    if "alpha" in overrides:
        cfg = replace(cfg, augment=replace(cfg.augment, alpha=float(overrides.pop("alpha"))))
    return replace(cfg, **overrides)


# --- stages -----------------------------------------------------------------


def stage_simulate(cfg: PipelineConfig, out) -> list:
    trials = generate_corpus(cfg.sim, cfg.n_success, cfg.n_fail, cfg.seed)
    write_corpus(out, trials, meta={**cfg.stamp(), "sim": cfg.sim.to_dict(),
                                    "n_success": cfg.n_success, "n_fail": cfg.n_fail}, stamp=cfg.stamp())
    return trials


def stage_prep(cfg: PipelineConfig, src, out):
    raw, _, _ = read_corpus(src)
    prepped, labels, prep_cfg = preprocess_corpus(raw, cfg.prep)
    write_corpus(out, prepped, labels, meta={**cfg.stamp(), "prep": prep_cfg.to_dict()}, stamp=cfg.stamp())
    return prepped, labels


def stage_build(cfg: PipelineConfig, src, out):
    """Split, augment the training trials and write ``windows.csv`` + ``split.json``."""
    trials, _, _ = read_corpus(src)
    by_id = {t.id: t for t in trials}
    split = split_trials(trials, cfg.split_fractions, cfg.seed)
    augmented = augment_split([by_id[i] for i in split.train], cfg.augment, cfg.seed)
    ordered = augmented + [by_id[i] for i in split.val] + [by_id[i] for i in split.test]
    table = build_window_table(ordered, cfg.windowing)
    out = Path(out)
    table.to_csv(out / "windows.csv")
    doc = {**split.as_dict(), "train_augmented": [t.id for t in augmented], **cfg.stamp()}
    write_json(out / "split.json", doc)
    write_json(out / "windows.meta.json", {**cfg.stamp(), "windowing": cfg.windowing.to_dict(),
                                           "rows": len(table), "features": table.n_features})
    return table, split


def _load_split(path) -> tuple[SplitAssignment, list]:
    doc = read_json(path)
    return SplitAssignment.from_dict(doc), doc.get("train_augmented", doc["train"])


def stage_train_rf(cfg: PipelineConfig, windows_path, out, split_path=None) -> ForestModel:
    table = WindowTable.from_csv(windows_path)
    if split_path:
        _, train_ids = _load_split(split_path)
        table = table.for_trials(train_ids)
    model = train_forest(table, cfg.forest, cfg.seed)
    write_json(out, {**model.to_dict(), **cfg.stamp()})
    return model


def stage_train_mlp(cfg: PipelineConfig, windows_path, split_path, out) -> MlpModel:
    table = WindowTable.from_csv(windows_path)
    split, train_ids = _load_split(split_path)
    train = table.for_trials(train_ids)
    val = table.for_trials(split.val)
    if len(val) == 0:
        val = train
    model = train_mlp(train, val, cfg.mlp, cfg.seed)
    write_json(out, {**model.to_dict(), **cfg.stamp()})
    return model


def load_model(path):
    doc = read_json(path)
    if doc.get("kind") == "rf":
        return ForestModel.from_dict(doc)
    if doc.get("kind") == "mlp":
        return MlpModel.from_dict(doc)
    raise ValueError(f"{path}: unknown model kind {doc.get('kind')!r}")


def stage_eval(cfg: PipelineConfig, model_paths, windows_path, trials_dir, split_path=None) -> dict:
    trials, _, _ = read_corpus(trials_dir)
    table = WindowTable.from_csv(windows_path)
    if split_path:
        split, _ = _load_split(split_path)
        test_ids = split.test
    else:
        test_ids = sorted({str(i) for i in table.trial_ids})
    test_set = set(test_ids)
    test_trials = [t for t in trials if t.id in test_set]
    test = table.for_trials(test_ids)
    reports = {}
    for path in model_paths:
        model = load_model(path)
        reports[model.kind] = evaluate_model(
            model, test, test_trials, cfg.seed, cfg.n_repeats, cfg.windowing, cfg.debounce_k, cfg.digest)
    return reports


def stage_ablate(cfg: PipelineConfig, trials_dir, subsets) -> list:
    trials, _, _ = read_corpus(trials_dir)
    split = split_trials(trials, cfg.split_fractions, cfg.seed)
    return ablate_sensor_subsets(trials, split, subsets, cfg.seed, cfg.augment, cfg.windowing, cfg.forest, cfg.mlp)


DEFAULT_SUBSETS = tuple((g,) for g in SENSOR_GROUPS) + (SENSOR_GROUPS,)


def parse_subsets(specs) -> list:
    return [parse_groups(s) for s in specs]


# --- reports ----------------------------------------------------------------


def report_document(reports: dict, cfg: PipelineConfig) -> dict:
    return {**cfg.stamp(), "models": {kind: r.to_dict() for kind, r in sorted(reports.items())}}


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def emit_report(reports: dict, out, cfg: PipelineConfig, svg: bool = False) -> Path:
    """Write report.json, metrics.csv, importance.csv and per-trial timelines."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report_document(reports, cfg))
    stamp = cfg.stamp()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "state", "precision", "recall", "f1", "support", "config_digest", "seed"])
        for kind, r in sorted(reports.items()):
            for s in STATE_NAMES:
                m = r.metrics.per_class[s]
                w.writerow([kind, s, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), m.support,
                            stamp["config_digest"], stamp["seed"]])
    with open(out / "importance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "state", *GROUP_NAMES, "config_digest", "seed"])
        for kind, r in sorted(reports.items()):
            for i, s in enumerate(STATE_NAMES):
                w.writerow([kind, s, *(_fmt(v) for v in r.importance.normalized[i]),
                            stamp["config_digest"], stamp["seed"]])
    tl_dir = out / "timelines"
    tl_dir.mkdir(exist_ok=True)
    for kind, r in sorted(reports.items()):
        for trial_id, rows in sorted(r.timelines.items()):
            path = tl_dir / f"{kind}_{trial_id}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["time_s", "true_state", "predicted_state", "true_event", "predicted_event",
                            "config_digest", "seed"])
                for row in rows:
                    w.writerow([repr(row["time_s"]), row["true_state"], row["predicted_state"],
                                row["true_event"], row["predicted_event"], stamp["config_digest"], stamp["seed"]])
            if svg:
                path.with_suffix(".svg").write_text(timeline_svg(rows, f"{kind} {trial_id}"))
    return out


def timeline_svg(rows, title: str = "") -> str:
    """Window strip: green where prediction matches truth, red otherwise."""
    width, height = 800, 60
    if not rows:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>'
    t_end = rows[-1]["time_s"] or 1.0
    step = t_end / len(rows)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="4" y="12" font-size="11">{title}</text>']
    for row in rows:
        x0 = (row["time_s"] - step) / t_end * width
        color = "#4caf50" if row["true_state"] == row["predicted_state"] else "#e53935"
        parts.append(f'<rect x="{x0:.2f}" y="18" width="{step / t_end * width:.2f}" height="30" '
                     f'fill="{color}" fill-opacity="0.5"/>')
        x = row["time_s"] / t_end * width
        if row["true_event"]:
            parts.append(f'<line x1="{x:.2f}" y1="14" x2="{x:.2f}" y2="56" stroke="black" stroke-dasharray="4,2"/>')
        if row["predicted_event"]:
            parts.append(f'<line x1="{x:.2f}" y1="14" x2="{x:.2f}" y2="56" stroke="black" stroke-dasharray="1,2"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_ablation(rows, out, cfg: PipelineConfig) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "ablation.json", {**cfg.stamp(), "rows": rows})
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "model", "n_features", "accuracy", "prefailure_recall", "picked_recall",
                    "config_digest", "seed"])
        for r in rows:
            w.writerow([r["subset"], r["model"], r["n_features"], _fmt(r["accuracy"]),
                        _fmt(r["prefailure_recall"]), _fmt(r["picked_recall"]),
                        cfg.digest, cfg.seed])
    return out


def _run(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # tag the failing stage for the CLI
        raise StageError(stage, exc) from exc


def run_pipeline(cfg: PipelineConfig, out=None, svg: bool = False) -> tuple[EvaluationReport, EvaluationReport]:
    """simulate -> prep -> build -> train rf/mlp -> eval -> report, all under ``out``."""
    out = Path(out or cfg.out_dir)
    _run("simulate", stage_simulate, cfg, out / "raw")
    _run("prep", stage_prep, cfg, out / "raw", out / "prepped")
    _run("build", stage_build, cfg, out / "prepped", out / "windows")
    windows, split = out / "windows" / "windows.csv", out / "windows" / "split.json"
    _run("train rf", stage_train_rf, cfg, windows, out / "models" / "rf.json", split)
    _run("train mlp", stage_train_mlp, cfg, windows, split, out / "models" / "mlp.json")
    reports = _run("eval", stage_eval, cfg, [out / "models" / "rf.json", out / "models" / "mlp.json"],
                   windows, out / "prepped", split)
    _run("report", emit_report, reports, out / "report", cfg, svg)
    return reports["rf"], reports["mlp"]
