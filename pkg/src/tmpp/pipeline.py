"""Run configuration and the stages of the local-validation workflow.

Each stage has an in-memory form (``run_*``) and a file form
(``stage_*``) that reads and writes plain files in the work directory and
records what it did in ``manifest.json``.  :func:`pipeline` chains the
file stages and skips those whose outputs already match the recorded
configuration hash.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .datagen import GenConfig, generate
from .ensemble import (
    ROLE_BLEND, ROLE_TRAIN, ROLE_TUNE, BlendModel, DecisionGrid, EnsembleModel, ModelGroup,
    PredictionSet, assign_roles, blend_fit, blend_scores, check_groups, default_groups,
    score_matrix, tune_decision, tune_ensemble,
)
from .eval import EvaluationReport, evaluate, hit_day_histogram
from .features import DEFAULT_BUCKETS, FeatureSchema, check_buckets, extract
from .instances import InstanceSet, TimeSpanConfig, build_prediction_set, build_training_set
from .log_model import Log, Month, load_log, save_log
from .models import MODEL_CLASSES, REGISTRY, Model, load_model
from .preprocess import DEFAULT_CLICK_THRESHOLD, SplitSpec, answer_pairs, cleanse
from .sharding import derive_seed

log_ = logging.getLogger("tmpp")

STAGES = (
    "clean", "split", "build-instances", "extract-features", "train",
    "blend", "tune", "predict", "evaluate", "analyze-hits",
)
SCHEMES = ("fixed", "sliding", "predict")

# per-model overrides applied on top of each config class's defaults
DEFAULT_MODEL_CONFIGS = {
    "lr_fixed": {"epochs": 200},
    "gbrt_fixed": {},
    "gbrt_sliding": {},
    "rf_fixed": {"max_samples": 20000},
    "rf_sliding": {"max_samples": 20000},
    "global": {},
}


@dataclass(frozen=True)
class BlendSettings:
    holdout_percent: int = 20
    tune_percent: int = 10
    l2: float = 1e-6


@dataclass(frozen=True)
class DecisionSettings:
    top_fractions: tuple[float, ...] = DecisionGrid().top_fractions
    ks: tuple[int | None, ...] = DecisionGrid().ks
    weight_step: float = 0.1

    def grid(self) -> DecisionGrid:
        return DecisionGrid(tuple(self.top_fractions), tuple(self.ks))


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on besides the input log.

    Relative paths are resolved against ``base_dir`` (the directory of the
    config file when loaded from disk).
    """

    log: str = "log.tsv"
    workdir: str = "work"
    seed: int = 0
    shards: int = 1
    gen: dict = field(default_factory=dict)
    click_threshold: int = DEFAULT_CLICK_THRESHOLD
    feature_months: tuple[str, ...] = ("April", "May", "June")
    answer_month: str = "July"
    target_days: int = 28
    sliding_stride: int = 20
    sliding_ends: int = 2
    buckets: tuple[int, ...] = DEFAULT_BUCKETS
    models: dict = field(default_factory=dict)
    groups: tuple | None = None
    blend: BlendSettings = BlendSettings()
    decision: DecisionSettings = DecisionSettings()
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "feature_months", tuple(self.feature_months))
        set_(self, "buckets", check_buckets(self.buckets))
        if isinstance(self.blend, dict):
            set_(self, "blend", BlendSettings(**self.blend))
        if isinstance(self.decision, dict):
            d = dict(self.decision)
            for key in ("top_fractions", "ks"):
                if key in d:
                    d[key] = tuple(d[key])
            set_(self, "decision", DecisionSettings(**d))
        if self.groups is not None:
            set_(self, "groups", tuple(
                g if isinstance(g, ModelGroup) else ModelGroup(g["name"], tuple(g["members"]))
                for g in self.groups
            ))
        problems = []
        if self.shards < 1:
            problems.append("shards must be >= 1")
        if "seed" in self.gen:
            problems.append("gen.seed is derived from the top-level seed; set 'seed' instead")
        unknown = set(self.models) - {s.name for s in REGISTRY}
        if unknown:
            problems.append(f"unknown models {sorted(unknown)}; registry is {[s.name for s in REGISTRY]}")
        if problems:
            raise ValueError("invalid run config: " + "; ".join(problems))
        # validate derived objects eagerly so errors surface before any work
        self.gen_config()
        self.split_spec()
        self.time_spans()
        self.model_configs()
        self.decision.grid()
        assign_roles(np.zeros(0), self.blend.holdout_percent, self.blend.tune_percent)
        if self.groups is not None:
            check_groups(self.groups, [s.name for s in REGISTRY])

    # -- derived objects -----------------------------------------------------------

    def gen_config(self) -> GenConfig:
        return GenConfig(**{**self.gen, "seed": derive_seed(self.seed, "datagen")})

    def split_spec(self) -> SplitSpec:
        def month(name):
            try:
                return Month[str(name).upper()]
            except KeyError:
                raise ValueError(f"unknown month {name!r}; use one of {[m.label for m in Month]}") from None

        return SplitSpec(tuple(month(m) for m in self.feature_months), month(self.answer_month))

    def window(self) -> tuple[int, int]:
        spec = self.split_spec()
        return spec.visible_start, spec.visible_end

    def time_spans(self) -> dict[str, TimeSpanConfig]:
        end = self.split_spec().visible_end
        fixed = TimeSpanConfig.fixed_for(end)
        sliding = TimeSpanConfig.sliding_for(end, self.sliding_stride, self.sliding_ends)
        return {
            "fixed": dataclasses.replace(fixed, target_days=self.target_days),
            "sliding": dataclasses.replace(sliding, target_days=self.target_days),
        }

    def model_configs(self) -> dict:
        out = {}
        for spec in REGISTRY:
            kw = {**DEFAULT_MODEL_CONFIGS[spec.name], **self.models.get(spec.name, {})}
            cls = MODEL_CLASSES[spec.kind].config_cls
            if spec.kind == "rf":
                kw.setdefault("seed", derive_seed(self.seed, "model", spec.name))
            if "alpha" in kw:
                kw["alpha"] = tuple(kw["alpha"])
            try:
                out[spec.name] = (spec, cls(**kw))
            except TypeError as exc:
                raise ValueError(f"models.{spec.name}: {exc}") from None
        return out

    def model_groups(self) -> list[ModelGroup]:
        return list(self.groups) if self.groups is not None else default_groups([s.name for s in REGISTRY])

    def path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def log_path(self) -> Path:
        return self.path(self.log)

    @property
    def work(self) -> Path:
        return self.path(self.workdir)

    # -- serialization ---------------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        if self.groups is not None:
            d["groups"] = [{"name": g.name, "members": list(g.members)} for g in self.groups]
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"invalid run config: unknown keys {sorted(unknown)}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValueError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {path}: {exc}") from None
        return cls.from_dict(d, path.parent)

    def section_hash(self, stage: str) -> str:
        """Hash of the settings one stage depends on."""
        d = self.to_dict()
        keys = {
            "generate": ["seed", "gen"],
            "clean": ["click_threshold"],
            "split": ["feature_months", "answer_month"],
            "build-instances": ["target_days", "sliding_stride", "sliding_ends"],
            "extract-features": ["buckets"],
            "train": ["seed", "models", "blend"],
            "blend": ["groups", "blend"],
            "tune": ["decision"],
        }.get(stage, [])
        return _hash_json({k: d[k] for k in keys})


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# -- in-memory stages ---------------------------------------------------------------


def run_clean(log: Log, cfg: RunConfig) -> tuple[Log, np.ndarray]:
    return cleanse(log, cfg.click_threshold, cfg.shards)


def run_split(clean: Log, cfg: RunConfig) -> tuple[Log, PredictionSet, Log]:
    """Visible log, answer set and the answer month's raw buy records."""
    spec = cfg.split_spec()
    start, end = spec.visible_start, spec.visible_end
    visible = clean.take((clean.day >= start) & (clean.day < end))
    a0, a1 = spec.answer_span
    answer_log = clean.take((clean.action == 1) & (clean.day >= a0) & (clean.day < a1))
    return visible, PredictionSet(answer_pairs(answer_log, a0, a1)), answer_log


def run_build_instances(visible: Log, cfg: RunConfig) -> dict[str, InstanceSet]:
    window = cfg.window()
    out = {name: build_training_set(visible, span, window, cfg.shards).canonical()
           for name, span in cfg.time_spans().items()}
    out["predict"] = build_prediction_set(visible, window, cfg.shards).canonical()
    return out


def run_extract_features(instances: dict, visible: Log, cfg: RunConfig) -> dict[str, InstanceSet]:
    start = cfg.window()[0]
    return {name: extract(inst, visible, cfg.buckets, start, cfg.shards) for name, inst in instances.items()}


def roles(instances: InstanceSet, cfg: RunConfig) -> np.ndarray:
    return assign_roles(instances.user, cfg.blend.holdout_percent, cfg.blend.tune_percent)


def _fit(name: str, data: InstanceSet | None, visible: Log, cfg: RunConfig, binned_cache=None) -> Model:
    spec, config = cfg.model_configs()[name]
    if spec.kind == "rf":
        config = dataclasses.replace(config, n_jobs=cfg.shards)
    model = MODEL_CLASSES[spec.kind](config, spec.scheme)
    t0 = time.perf_counter()
    if spec.kind in ("gbrt", "rf"):
        model.fit(data, visible, binned_cache=binned_cache)
    else:
        model.fit(data, visible)
    log_.info("trained %s on %d instances in %.1fs", name, 0 if data is None else len(data),
              time.perf_counter() - t0)
    return model


def training_rows(features: dict, scheme: str, cfg: RunConfig) -> InstanceSet:
    data = features[scheme]
    keep = roles(data, cfg) == ROLE_TRAIN
    return data if keep.all() else data.take(np.flatnonzero(keep))


def train_one(name: str, features: dict, visible: Log, cfg: RunConfig) -> Model:
    spec, _ = cfg.model_configs()[name]
    data = None if spec.scheme is None else training_rows(features, spec.scheme, cfg)
    return _fit(name, data, visible, cfg)


def run_train(features: dict, visible: Log, cfg: RunConfig) -> dict[str, Model]:
    """All registry models; tree models of a scheme share one presorted matrix."""
    models = {}
    for scheme in ("fixed", "sliding", None):
        names = [s.name for s in REGISTRY if s.scheme == scheme]
        data = None if scheme is None else training_rows(features, scheme, cfg)
        cache: dict = {}
        for name in names:
            models[name] = _fit(name, data, visible, cfg, cache)
        del cache, data
    return {s.name: models[s.name] for s in REGISTRY}


def holdout(features: dict, cfg: RunConfig, role: int) -> InstanceSet:
    """Fixed-scheme instances of held-out users with the given role."""
    data = features["fixed"]
    r = roles(data, cfg)
    if role == ROLE_TUNE and cfg.blend.tune_percent == 0:
        role = ROLE_BLEND
    return data.take(np.flatnonzero(r == role))


def run_blend(models: dict, features: dict, visible: Log, cfg: RunConfig) -> list[BlendModel]:
    data = holdout(features, cfg, ROLE_BLEND)
    names = list(models)
    M = score_matrix(list(models.values()), data, visible, cfg.shards)
    transforms = {n: "log1p" if models[n].kind == "global" else "logit" for n in names}
    return blend_fit(M, data.label, cfg.model_groups(), names, cfg.blend.l2, transforms)


def _tune_answer(data: InstanceSet, visible: Log, cfg: RunConfig) -> PredictionSet:
    _, (t0, t1) = cfg.time_spans()["fixed"].spans()[0]
    users = set(np.unique(data.user).tolist())
    return PredictionSet({u: b for u, b in answer_pairs(visible, t0, t1).items() if u in users})


def run_tune(models: dict, blends: list, features: dict, visible: Log, cfg: RunConfig):
    """Stage-two weights and decision rule, plus per-group validation F1."""
    data = holdout(features, cfg, ROLE_TUNE)
    names = list(models)
    M = score_matrix(list(models.values()), data, visible, cfg.shards)
    G = blend_scores(blends, M, names)
    answer = _tune_answer(data, visible, cfg)
    grid = cfg.decision.grid()
    tuned = tune_ensemble(data.user, data.brand, G, answer, grid, cfg.decision.weight_step)
    ens = EnsembleModel(blends, tuned.weights, tuned.decision.tau, tuned.decision.k)
    report = {"instances": len(data), "answer_pairs": answer.n_pairs,
              "ensemble_f1": float(tuned.decision.f1), "groups": {}}
    for j, b in enumerate(blends):
        members = {m: float(tune_decision(data.user, data.brand, M[:, names.index(m)], answer, grid).f1)
                   for m in b.members}
        blended = float(tune_decision(data.user, data.brand, G[:, j], answer, grid).f1)
        report["groups"][b.group] = {"blend_f1": blended, "members": members}
    return ens, report


def run_predict(models: dict, ensemble: EnsembleModel, features: dict, visible: Log, cfg: RunConfig) -> PredictionSet:
    data = features["predict"]
    M = score_matrix(list(models.values()), data, visible, cfg.shards)
    return ensemble.predict(data, M, list(models))


@dataclass
class PipelineResult:
    clean: Log
    removed: np.ndarray
    visible: Log
    answer: PredictionSet
    answer_log: Log
    features: dict
    models: dict
    ensemble: EnsembleModel
    tune_report: dict
    prediction: PredictionSet
    report: EvaluationReport
    histogram: np.ndarray
    timings: dict


def run_pipeline(log: Log, cfg: RunConfig, keep_features: bool = True) -> PipelineResult:
    """The whole chain in memory; same results as :func:`pipeline` on files.

    The returned features hold the fixed and prediction sets; sliding
    features are dropped after training.
    """
    t: dict[str, float] = {}

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        t[name] = time.perf_counter() - t0
        log_.info("%s: %.1fs", name, t[name])
        return out

    clean, removed = timed("clean", run_clean, log, cfg)
    visible, answer, answer_log = timed("split", run_split, clean, cfg)
    inst = timed("build-instances", run_build_instances, visible, cfg)
    # sliding instances only ever train, so only training users get features;
    # prediction features are built once the training matrices are gone
    sliding = inst["sliding"]
    inst["sliding"] = sliding.take(np.flatnonzero(roles(sliding, cfg) == ROLE_TRAIN))
    todo = {k: inst.pop(k) for k in ("fixed", "sliding")}
    feats = timed("extract-features", run_extract_features, todo, visible, cfg)
    del sliding, todo
    models = timed("train", run_train, feats, visible, cfg)
    del feats["sliding"]
    blends = timed("blend", run_blend, models, feats, visible, cfg)
    ens, tune_report = timed("tune", run_tune, models, blends, feats, visible, cfg)
    t0 = time.perf_counter()
    feats.update(run_extract_features(inst, visible, cfg))
    t["extract-features"] += time.perf_counter() - t0
    pred = timed("predict", run_predict, models, ens, feats, visible, cfg)
    report = timed("evaluate", evaluate, pred, answer)
    hist = timed("analyze-hits", hit_day_histogram, pred, answer_log, cfg.split_spec().answer_span)
    if not keep_features:
        feats = {}
    return PipelineResult(clean, removed, visible, answer, answer_log, feats, models, ens,
                          tune_report, pred, report, hist, t)


# -- file formats ------------------------------------------------------------------------


def save_instances(path, inst: InstanceSet) -> None:
    """``user, brand, feature_end, label, buy_count, f1,...,fd`` per line.

    Features are written with 17 significant digits so float32 values read
    back exactly; unlabeled instances leave the target columns empty.
    """
    n = len(inst)
    head = pd.DataFrame({
        "u": inst.user, "b": inst.brand, "e": inst.feature_end,
        "l": inst.label if inst.label is not None else [""] * n,
        "c": inst.buy_count if inst.buy_count is not None else [""] * n,
    })
    if inst.X is not None and inst.X.shape[1] and n:
        feats = pd.DataFrame(inst.X.astype(np.float64)).to_csv(
            header=False, index=False, float_format="%.17g", lineterminator="\n").splitlines()
    else:
        feats = [""] * n
    head["f"] = feats
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head.to_csv(fh, sep="\t", header=False, index=False, lineterminator="\n")


def load_instances(path, schema: FeatureSchema | None = None) -> InstanceSet:
    try:
        df = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False,
                         names=["u", "b", "e", "l", "c", "f"])
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=["u", "b", "e", "l", "c", "f"])
    except (pd.errors.ParserError, ValueError) as exc:
        raise ValueError(f"{path}: malformed instance file ({exc})") from None
    try:
        user = df["u"].astype(np.int64).to_numpy()
        brand = df["b"].astype(np.int64).to_numpy()
        fe = df["e"].astype(np.int64).to_numpy()
        labeled = len(df) > 0 and (df["l"] != "").all()
        label = df["l"].astype(np.int8).to_numpy() if labeled else None
        count = df["c"].astype(np.int64).to_numpy() if labeled else None
    except ValueError as exc:
        raise ValueError(f"{path}: malformed instance file ({exc})") from None
    X = None
    if len(df) and (df["f"] != "").all():
        X = pd.read_csv(io.StringIO("\n".join(df["f"])), header=None, float_precision="round_trip",
                        dtype=np.float64).to_numpy().astype(np.float32)
        if schema is not None and X.shape[1] != len(schema):
            raise ValueError(f"{path}: {X.shape[1]} features but the schema lists {len(schema)}")
    elif schema is not None and len(df) == 0:
        X = np.zeros((0, len(schema)), np.float32)
    return InstanceSet(user, brand, fe, label, count, X, schema if X is not None else None)


def save_removed(path, removed) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\n" for u in np.sort(np.asarray(removed)).tolist())


def save_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- workdir stages --------------------------------------------------------------------


class Workdir:
    """Stage files plus ``manifest.json`` (stage -> config hash and outputs)."""

    FILES = {
        "clean": ["clean.tsv", "removed_users.txt"],
        "split": ["visible.tsv", "answer.tsv", "answer_log.tsv"],
        "build-instances": [f"instances_{s}.tsv" for s in SCHEMES],
        "extract-features": [f"features_{s}.tsv" for s in SCHEMES] + ["schema.tsv"],
        "train": [f"models/{s.name}.json" for s in REGISTRY],
        "blend": ["blend.json"],
        "tune": ["ensemble.json", "tune_report.json"],
        "predict": ["predictions.tsv"],
        "evaluate": ["report.txt", "report.csv"],
        "analyze-hits": ["hits.csv"],
    }

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.work
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "models").mkdir(exist_ok=True)

    def __truediv__(self, name) -> Path:
        return self.root / name

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"format": "tmpp-manifest", "version": 1, "stages": {}, "pipeline": []}
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def write_manifest(self, m: dict) -> None:
        tmp = self.root / "manifest.json.tmp"
        save_json(tmp, m)
        os.replace(tmp, self.manifest_path)

    def stage_hash(self, stage: str) -> str:
        """Configuration hash of ``stage`` chained with all upstream stages."""
        upstream = _file_hash(self.cfg.log_path) if self.cfg.log_path.exists() else "missing"
        for s in STAGES:
            upstream = _hash_json([s, self.cfg.section_hash(s), upstream])
            if s == stage:
                return upstream
        raise ValueError(f"unknown stage {stage!r}")

    def up_to_date(self, stage: str) -> bool:
        rec = self.manifest()["stages"].get(stage)
        return (rec is not None and rec["config_hash"] == self.stage_hash(stage)
                and all((self.root / f).exists() for f in self.FILES[stage]))

    def record(self, stage: str) -> None:
        m = self.manifest()
        m["stages"][stage] = {
            "config_hash": self.stage_hash(stage),
            "outputs": {f: _file_hash(self.root / f) for f in self.FILES[stage]},
        }
        self.write_manifest(m)

    def need(self, stage: str, producer: str) -> None:
        missing = [f for f in self.FILES[producer] if not (self.root / f).exists()]
        if missing:
            raise FileNotFoundError(
                f"{stage}: missing {', '.join(missing)} in {self.root}; run `tmpp {producer}` first"
            )


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def load_features(wd: Workdir, schemes=SCHEMES) -> dict[str, InstanceSet]:
    wd.need("load features", "extract-features")
    schema = FeatureSchema.from_text((wd / "schema.tsv").read_text(encoding="utf-8"))
    return {s: load_instances(wd / f"features_{s}.tsv", schema) for s in schemes}


def load_models(wd: Workdir) -> dict[str, Model]:
    wd.need("models", "train")
    return {s.name: load_model(wd / f"models/{s.name}.json") for s in REGISTRY}


def stage_generate(cfg: RunConfig) -> Path:
    path = cfg.log_path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_log(path, generate(cfg.gen_config(), cfg.shards))
    return path


def _load_input_log(cfg: RunConfig) -> Log:
    if not cfg.log_path.exists():
        raise FileNotFoundError(f"input log {cfg.log_path} not found; run `tmpp generate` or set 'log'")
    return load_log(cfg.log_path)


def stage_clean(wd: Workdir) -> None:
    clean, removed = run_clean(_load_input_log(wd.cfg), wd.cfg)
    save_log(wd / "clean.tsv", clean)
    save_removed(wd / "removed_users.txt", removed)
    wd.record("clean")


def stage_split(wd: Workdir) -> None:
    wd.need("split", "clean")
    visible, answer, alog = run_split(load_log(wd / "clean.tsv"), wd.cfg)
    save_log(wd / "visible.tsv", visible)
    answer.save(wd / "answer.tsv")
    save_log(wd / "answer_log.tsv", alog)
    wd.record("split")


def stage_build_instances(wd: Workdir) -> None:
    wd.need("build-instances", "split")
    inst = run_build_instances(load_log(wd / "visible.tsv"), wd.cfg)
    for s in SCHEMES:
        save_instances(wd / f"instances_{s}.tsv", inst[s])
    wd.record("build-instances")


def stage_extract_features(wd: Workdir) -> None:
    wd.need("extract-features", "build-instances")
    visible = load_log(wd / "visible.tsv")
    inst = {s: load_instances(wd / f"instances_{s}.tsv") for s in SCHEMES}
    feats = run_extract_features(inst, visible, wd.cfg)
    for s in SCHEMES:
        save_instances(wd / f"features_{s}.tsv", feats[s])
    (wd / "schema.tsv").write_text(feats["fixed"].schema.to_text(), encoding="utf-8")
    wd.record("extract-features")


def stage_train(wd: Workdir, only: str | None = None) -> None:
    """Train every registry model, or just ``only`` (a registry name)."""
    visible = load_log(wd / "visible.tsv")
    if only is not None:
        if only not in {s.name for s in REGISTRY}:
            raise ValueError(f"no registry model {only!r}; choose from {[s.name for s in REGISTRY]}")
        feats = load_features(wd)
        model = train_one(only, feats, visible, wd.cfg)
        _save_model(wd, model)
        return
    feats = load_features(wd, ("fixed", "sliding"))
    for name, model in run_train(feats, visible, wd.cfg).items():
        _save_model(wd, model)
    wd.record("train")


def _save_model(wd: Workdir, model: Model) -> None:
    if model.kind == "global":
        model.schema_hash = None
    model.save(wd / f"models/{model.name}.json")


def stage_blend(wd: Workdir) -> None:
    models = load_models(wd)
    feats = load_features(wd, ("fixed",))
    blends = run_blend(models, feats, load_log(wd / "visible.tsv"), wd.cfg)
    save_json(wd / "blend.json", {"format": "tmpp-blend", "version": 1, "blends": [b.to_dict() for b in blends]})
    wd.record("blend")


def stage_tune(wd: Workdir) -> None:
    wd.need("tune", "blend")
    models = load_models(wd)
    blends = [BlendModel.from_dict(b) for b in json.loads((wd / "blend.json").read_text())["blends"]]
    feats = load_features(wd, ("fixed",))
    ens, report = run_tune(models, blends, feats, load_log(wd / "visible.tsv"), wd.cfg)
    ens.save(wd / "ensemble.json")
    save_json(wd / "tune_report.json", report)
    wd.record("tune")


def stage_predict(wd: Workdir) -> PredictionSet:
    wd.need("predict", "tune")
    models = load_models(wd)
    ens = EnsembleModel.load(wd / "ensemble.json")
    feats = load_features(wd, ("predict",))
    pred = run_predict(models, ens, feats, load_log(wd / "visible.tsv"), wd.cfg)
    pred.save(wd / "predictions.tsv")
    wd.record("predict")
    return pred


def stage_evaluate(wd: Workdir) -> EvaluationReport:
    wd.need("evaluate", "predict")
    rep = evaluate(PredictionSet.load(wd / "predictions.tsv"), PredictionSet.load(wd / "answer.tsv"))
    (wd / "report.txt").write_text(rep.to_text(), encoding="utf-8")
    (wd / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
    wd.record("evaluate")
    return rep


def stage_analyze_hits(wd: Workdir) -> np.ndarray:
    from .eval import histogram_csv

    wd.need("analyze-hits", "predict")
    hist = hit_day_histogram(PredictionSet.load(wd / "predictions.tsv"), load_log(wd / "answer_log.tsv"),
                             wd.cfg.split_spec().answer_span)
    (wd / "hits.csv").write_text(histogram_csv(hist), encoding="utf-8")
    wd.record("analyze-hits")
    return hist


STAGE_FUNCS = {
    "clean": stage_clean,
    "split": stage_split,
    "build-instances": stage_build_instances,
    "extract-features": stage_extract_features,
    "train": stage_train,
    "blend": stage_blend,
    "tune": stage_tune,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "analyze-hits": stage_analyze_hits,
}


def pipeline(cfg: RunConfig, resume: bool = True) -> dict:
    """Run every stage in order; returns ``{stage: 'ran' | 'skipped'}``."""
    wd = Workdir(cfg)
    status = {}
    for stage in STAGES:
        if resume and wd.up_to_date(stage):
            status[stage] = "skipped"
            log_.info("%s: up to date, skipped", stage)
            continue
        t0 = time.perf_counter()
        STAGE_FUNCS[stage](wd)
        status[stage] = "ran"
        log_.info("%s: %.1fs", stage, time.perf_counter() - t0)
    m = wd.manifest()
    m["pipeline"] = list(STAGES)
    m["run_config"] = cfg.to_dict()
    wd.write_manifest(m)
    return status
