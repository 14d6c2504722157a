"""End-to-end evaluation pipeline: synthetic generation, embedding, two-stage
training, per-phase scoring, and metric correlation.

Each command reads and writes files under a single output directory, so a
``run-all`` is byte-identical to running the five commands one at a time.
Every artifact embeds or checks the autoencoder config digest so mixed
artifacts fail loudly rather than producing silently wrong numbers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .autoencoder import (
    AEConfig,
    TrainSample,
    config_digest,
    default_ae_config,
    encode,
    load_checkpoint,
    save_checkpoint,
    train_two_stage,
)
from .dataset import FeatureDataset
from .embed import (
    BUILTIN_MODEL,
    EMBED_DIM,
    Representation,
    embed_scene,
    load_external_embeddings,
    write_embeddings,
)
from .errors import ConfigError, CoverageError, FormatError
from .gt import parse_gt_file, write_gt_file
from .scoring import (
    SimilaritySeries,
    aggregate_phases,
    build_report,
    read_metrics_csv,
    similarity_score,
    write_metrics_csv,
    write_report_csv,
    write_report_json,
)
from .synthetic import SynthConfig, gen_features, gen_metric_series, gen_scenes


@dataclass
class PipelineConfig:
    out_dir: str
    module_tag: str = "module"
    space: str = "3d"
    seed: int | None = None
    gt_path: str | None = None
    features: list[str] = field(default_factory=list)
    embeddings: str = "builtin"
    metrics_path: str | None = None
    autoencoder: dict = field(default_factory=dict)
    synthetic: dict | None = None

    def __post_init__(self):
        if self.space not in ("2d", "3d"):
            raise ConfigError(f"space must be '2d' or '3d', got {self.space!r}")
        if isinstance(self.features, str):
            self.features = [p for p in self.features.split(",") if p]

    # default artifact locations under the output directory
    def path_gt(self):
        return self.gt_path or os.path.join(self.out_dir, "gt.json")

    def feature_dirs(self):
        return self.features or [os.path.join(self.out_dir, "features")]

    def path_metrics(self):
        return self.metrics_path or os.path.join(self.out_dir, "metrics.csv")

    def path_embeddings(self):
        if self.embeddings == "builtin":
            return os.path.join(self.out_dir, "embeddings.jsonl")
        return self.embeddings

    def path_checkpoint(self):
        return os.path.join(self.out_dir, "checkpoint.aeck")

    def path_train_report(self):
        return os.path.join(self.out_dir, "train_report.json")

    def path_scores(self):
        return os.path.join(self.out_dir, "scores.csv")

    def path_series(self):
        return os.path.join(self.out_dir, "similarity_series.json")

    def path_report(self):
        return os.path.join(self.out_dir, "report.json")

    def path_report_csv(self):
        return os.path.join(self.out_dir, "report.csv")

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or config 'seed'); wall-clock seeding is never used")
        return int(self.seed)

    def synth_config(self) -> SynthConfig:
        raw = dict(self.synthetic or {})
        for key in ("bev_shape", "image_shape", "alpha", "map_range", "nds_range"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        try:
            return SynthConfig(seed=self.require_seed(), **raw)
        except TypeError as e:
            raise ConfigError(f"bad synthetic config: {e}") from e

    def ae_config(self, per_camera_shape) -> AEConfig:
        raw = dict(self.autoencoder)
        latent = int(raw.pop("latent_dim", EMBED_DIM))
        channels = raw.pop("channels", None)
        hidden_activation = str(raw.pop("hidden_activation", "relu"))
        try:
            return default_ae_config(
                per_camera_shape,
                latent_dim=latent,
                seed=self.require_seed(),
                channels=channels,
                hidden_activation=hidden_activation,
                **raw,
            )
        except TypeError as e:
            raise ConfigError(f"bad autoencoder config: {e}") from e


_CONFIG_KEYS = {
    "module_tag",
    "space",
    "seed",
    "gt",
    "features",
    "embeddings",
    "metrics",
    "autoencoder",
    "synthetic",
}


def load_pipeline_config(config_path: str | None, out_dir: str, **overrides) -> PipelineConfig:
    """Merge a JSON config file with CLI overrides (flags win)."""
    raw = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise FormatError(f"{config_path}: invalid JSON: {e}") from e
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"{config_path}: unknown config keys {sorted(unknown)}")
    merged = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    return PipelineConfig(
        out_dir=out_dir,
        module_tag=str(merged.get("module_tag", "module")),
        space=str(merged.get("space", "3d")),
        seed=merged.get("seed"),
        gt_path=merged.get("gt"),
        features=merged.get("features") or [],
        embeddings=str(merged.get("embeddings", "builtin")),
        metrics_path=merged.get("metrics"),
        autoencoder=dict(merged.get("autoencoder") or {}),
        synthetic=merged.get("synthetic"),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(cfg: PipelineConfig):
    """Write the GT file, the feature dataset, and the surrogate metric CSV."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    synth = cfg.synth_config()
    scenes = gen_scenes(synth)
    write_gt_file(cfg.path_gt(), scenes)
    reps = {s.sample_id: embed_scene(s, cfg.space) for s in scenes}
    ds = gen_features(synth, scenes, reps, cfg.space, module_tag=cfg.module_tag)
    ds.save(cfg.feature_dirs()[0])
    write_metrics_csv(cfg.path_metrics(), gen_metric_series(synth))


def cmd_embed(cfg: PipelineConfig):
    """Materialize the embedding interchange file (builtin provider), or
    validate an externally supplied one."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.embeddings == "builtin":
        scenes = parse_gt_file(cfg.path_gt())
        reps = []
        for scene in scenes:
            for space in ("2d", "3d"):
                reps.append(embed_scene(scene, space))
        write_embeddings(cfg.path_embeddings(), reps, BUILTIN_MODEL)
    else:
        load_external_embeddings(cfg.embeddings)


def _load_reps(cfg: PipelineConfig) -> tuple[dict[str, Representation], dict]:
    """Space-filtered representations plus provenance for reporting."""
    path = cfg.path_embeddings()
    if not os.path.exists(path):
        raise FormatError(
            f"{path}: embeddings file not found (run the embed command or point "
            f"'embeddings' at an external interchange file)"
        )
    all_reps = load_external_embeddings(path)
    models = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                models.add(str(json.loads(line).get("model", "")))
    model = "+".join(sorted(models)) if models else ""
    source = {
        "kind": "builtin" if model == BUILTIN_MODEL else "external",
        "model": model,
    }
    reps = {sid: rep for (sid, space), rep in all_reps.items() if space == cfg.space}
    return reps, source


def _load_datasets(cfg: PipelineConfig, for_scoring: bool = False) -> list[FeatureDataset]:
    dirs = cfg.feature_dirs()
    if for_scoring and len(dirs) != 1:
        raise ConfigError("score works on exactly one feature dataset at a time")
    datasets = [FeatureDataset.load(d) for d in dirs]
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.space != first.space or ds.shape != first.shape:
            raise ConfigError(
                f"pooled datasets disagree: {ds.module_tag!r} is {ds.space}/{ds.shape}, "
                f"{first.module_tag!r} is {first.space}/{first.shape}"
            )
    for ds in datasets:
        if ds.space != cfg.space:
            raise ConfigError(f"dataset {ds.module_tag!r} is {ds.space} but config space is {cfg.space}")
    return datasets


def _coverage_check(sample_ids, reps: dict[str, Representation], what: str):
    missing = sorted(set(sample_ids) - set(reps))
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise CoverageError(f"{what}: no representation for sample_ids: {shown}{more}")


def cmd_train(cfg: PipelineConfig):
    """Two-stage training over every (sample, phase) feature; writes the
    checkpoint and the per-epoch training report."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    datasets = _load_datasets(cfg)
    reps, _ = _load_reps(cfg)
    samples = []
    for ds in datasets:
        _coverage_check(ds.sample_ids, reps, f"dataset {ds.module_tag!r}")
        for phase in ds.phases:
            for sid in ds.sample_ids:
                samples.append(TrainSample(sid, phase, ds.get(sid, phase)))
    aecfg = cfg.ae_config(datasets[0].per_camera_shape())
    params, report = train_two_stage(aecfg, samples, reps)
    save_checkpoint(cfg.path_checkpoint(), params, aecfg)
    payload = {"config_digest": f"{config_digest(aecfg):016x}", **report.to_dict()}
    with open(cfg.path_train_report(), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_score(cfg: PipelineConfig):
    """Encode every phase with the trained encoder and score against GT
    representations; writes per-sample scores CSV and the phase series."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = _load_datasets(cfg, for_scoring=True)[0]
    reps, source = _load_reps(cfg)
    _coverage_check(ds.sample_ids, reps, f"dataset {ds.module_tag!r}")
    aecfg = cfg.ae_config(ds.per_camera_shape())
    params = load_checkpoint(cfg.path_checkpoint(), aecfg)

    rows = []
    for phase in ds.phases:
        for sid in sorted(ds.sample_ids):
            r_fm = encode(params, ds.get(sid, phase), sample_id=sid)
            rows.append((sid, phase, similarity_score(r_fm, reps[sid])))
    with open(cfg.path_scores(), "w", encoding="utf-8") as fh:
        fh.write("sample_id,phase,score\n")
        for sid, phase, score in sorted(rows, key=lambda r: (r[1], r[0])):
            fh.write(f"{sid},{phase},{score!r}\n")
    series = aggregate_phases(rows, module_tag=ds.module_tag, expected_phases=ds.phases)
    payload = {
        "module_tag": series.module_tag,
        "space": ds.space,
        "config_digest": f"{config_digest(aecfg):016x}",
        "embedding_source": source,
        "phase_scores": [
            {"phase": p, "mean_score": m, "count": c} for p, m, c in series.phase_scores
        ],
    }
    with open(cfg.path_series(), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_correlate(cfg: PipelineConfig):
    """Join the similarity series with the metric series; writes the report."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(cfg.path_series(), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    series = SimilaritySeries(
        module_tag=str(raw["module_tag"]),
        phase_scores=[(int(r["phase"]), float(r["mean_score"]), int(r["count"])) for r in raw["phase_scores"]],
    )
    metrics = read_metrics_csv(cfg.path_metrics())
    report = build_report(
        series,
        metrics,
        embedding_source=raw.get("embedding_source", {}),
        config_digest=str(raw.get("config_digest", "")),
    )
    write_report_json(cfg.path_report(), report)
    write_report_csv(cfg.path_report_csv(), report)


def cmd_run_all(cfg: PipelineConfig):
    """gen-synth (when a synthetic section is configured), then embed, train,
    score, correlate — all through the on-disk artifacts."""
    if cfg.synthetic is not None:
        cmd_gen_synth(cfg)
    cmd_embed(cfg)
    cmd_train(cfg)
    cmd_score(cfg)
    cmd_correlate(cfg)
