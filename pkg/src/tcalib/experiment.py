"""Experiment configs, method comparisons, grid search and plot-data export.

A run evaluates every configured method on every seed. Each sample is tuned
from a freshly initialized prompt, so results never depend on sample order.
Outputs in the results directory:

    manifest.json      resolved config, every default included
    records.tsv        one line per (seed, method, sample)
    aggregate.tsv/json one row per (method, seed)
    reliability.json   per-bin statistics per (method, seed)
    snapshots.json     tuned prompt embeddings of the snapshot sample
    timings.tsv        wall-clock times (the only non-deterministic file)
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import os
import re
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .attributes import AttributeCatalog, load_catalog, rank_attributes, synthetic_catalog
from .bench import FeatureBundle, Shift, SyntheticSpec, generate, read_bundle
from .calibration import BinStats, PredictionRecord, dispersion_summary, ece, ece_arrays, pca_projection
from .embedcore import AugmentationConfig, EncoderConfig
from .errors import ConfigValidationError, InvalidArgumentError, NumericFailureError, TcalibError
from .objective import ClassifierConfig, LossWeights, class_logits, softmax
from .tuner import (
    DEFAULT_TEMPLATES,
    TunerConfig,
    ZeroShotContext,
    init_prompt,
    prompt_class_set,
    class_text_embeddings,
    tune_on_sample,
    view_embeddings,
)

log = logging.getLogger(__name__)

SEED_ENV = "TCALIB_GLOBAL_SEED"


@dataclass(frozen=True)
class MethodDescriptor:
    name: str
    use_attributes: bool = False
    top_m: int = 2
    alpha: float = 0.0
    beta: float = 0.0
    ensemble: bool = False
    # 0 means no test-time tuning (plain zero-shot prompt)
    n_steps: int = 1

    def __post_init__(self):
        if not self.name:
            raise ConfigValidationError("method name must be non-empty")
        if self.top_m < 1 or self.n_steps < 0:
            raise ConfigValidationError(f"method {self.name!r}: top_m >= 1 and n_steps >= 0 required")
        LossWeights(self.alpha, self.beta)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)


def default_methods(alpha: float = 10.0, beta: float = 35.0, top_m: int = 2) -> list[MethodDescriptor]:
    return [
        MethodDescriptor("CLIP_HardPrompt", n_steps=0),
        MethodDescriptor("TPT_HardPrompt"),
        MethodDescriptor("TPT_HardPrompt+Inter", use_attributes=True, top_m=top_m, alpha=alpha),
        MethodDescriptor("TPT_HardPrompt+TCA", use_attributes=True, top_m=top_m, alpha=alpha, beta=beta),
    ]


@dataclass(frozen=True)
class DatasetSource:
    """Either a synthetic spec (its seed is replaced per run seed) or a bundle path."""

    synthetic: SyntheticSpec | None = None
    bundle: str | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.bundle is None):
            raise ConfigValidationError("dataset needs exactly one of 'synthetic' or 'bundle'")


@dataclass(frozen=True)
class CatalogSource:
    path: str | None = None
    synthetic_attributes: int | None = None
    strict: bool = True

    def __post_init__(self):
        if (self.path is None) == (self.synthetic_attributes is None):
            raise ConfigValidationError("catalog needs exactly one of 'path' or 'synthetic_attributes'")


@dataclass(frozen=True)
class AugmentSettings:
    noise_sigma: float = 0.02
    dropout_fraction: float = 0.1


@dataclass(frozen=True)
class GridSettings:
    method: str | None = None
    alpha: tuple[float, ...] = (0.0, 10.0, 45.0)
    beta: tuple[float, ...] = (0.0, 15.0, 35.0)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    catalog: CatalogSource
    methods: tuple[MethodDescriptor, ...] = tuple(default_methods())
    seeds: tuple[int, ...] = (0,)
    global_seed: int = 0
    encoder: EncoderConfig = EncoderConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    tuner: TunerConfig = TunerConfig()
    augmentation: AugmentSettings = AugmentSettings()
    template: str = DEFAULT_TEMPLATES[0]
    ensemble_templates: tuple[str, ...] = DEFAULT_TEMPLATES
    permissive_attributes: bool = False
    n_bins: int = 15
    output_dir: str = "results"
    failure_budget: int = 0
    snapshot_sample: int = 0
    calibration_dataset: DatasetSource | None = None
    grid: GridSettings = GridSettings()

    def __post_init__(self):
        if not self.methods:
            raise ConfigValidationError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigValidationError(f"method names must be unique: {names}")
        if not self.seeds:
            raise ConfigValidationError("at least one seed is required")
        if self.n_bins < 1 or self.failure_budget < 0:
            raise ConfigValidationError("n_bins >= 1 and failure_budget >= 0 required")
        if not self.ensemble_templates:
            raise ConfigValidationError("ensemble_templates must be non-empty")

    def method(self, name: str) -> MethodDescriptor:
        for m in self.methods:
            if m.name == name:
                return m
        raise ConfigValidationError(f"no method named {name!r}")


# ---------------------------------------------------------------- config I/O

_NESTED = {
    "dataset": DatasetSource,
    "calibration_dataset": DatasetSource,
    "catalog": CatalogSource,
    "encoder": EncoderConfig,
    "classifier": ClassifierConfig,
    "tuner": TunerConfig,
    "augmentation": AugmentSettings,
    "grid": GridSettings,
    "synthetic": SyntheticSpec,
    "shift": Shift,
    "weights": LossWeights,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigValidationError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigValidationError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "methods":
            if not isinstance(value, list):
                raise ConfigValidationError(f"{where}.methods: expected a list")
            value = tuple(_build(MethodDescriptor, m, f"{where}.methods[{i}]") for i, m in enumerate(value))
        elif key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigValidationError:
        raise
    except (TypeError, ValueError, TcalibError) as exc:
        raise ConfigValidationError(f"{where}: {exc}") from None


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    data = copy.deepcopy(data)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            data["global_seed"] = int(env)
        except ValueError:
            raise ConfigValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    cfg = _build(ExperimentConfig, data, "config")
    if base_dir is not None:
        cfg = _resolve_paths(cfg, Path(base_dir))
    return cfg


def _resolve_paths(cfg: ExperimentConfig, base: Path) -> ExperimentConfig:
    def fix(p):
        return p if p is None or Path(p).is_absolute() else str(base / p)

    def fix_ds(ds):
        return ds if ds is None or ds.bundle is None else dataclasses.replace(ds, bundle=fix(ds.bundle))

    return dataclasses.replace(
        cfg,
        dataset=fix_ds(cfg.dataset),
        calibration_dataset=fix_ds(cfg.calibration_dataset),
        catalog=dataclasses.replace(cfg.catalog, path=fix(cfg.catalog.path)),
        output_dir=fix(cfg.output_dir),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigValidationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigValidationError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(data or {}, base_dir=path.parent)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every referenced file before any compute starts."""
    for ds in (cfg.dataset, cfg.calibration_dataset):
        if ds is not None and ds.bundle is not None and not Path(ds.bundle).is_file():
            raise ConfigValidationError(f"bundle not found: {ds.bundle}")
        if ds is not None and ds.synthetic is not None and ds.synthetic.d_raw != cfg.encoder.raw_dim:
            raise ConfigValidationError(
                f"synthetic d_raw={ds.synthetic.d_raw} but encoder d_raw={cfg.encoder.raw_dim}"
            )
    if cfg.catalog.path is not None:
        if not Path(cfg.catalog.path).is_file():
            raise ConfigValidationError(f"catalog not found: {cfg.catalog.path}")
        try:
            load_catalog(cfg.catalog.path, strict=cfg.catalog.strict)
        except TcalibError as exc:
            raise ConfigValidationError(str(exc)) from None
    if cfg.grid.method is not None:
        cfg.method(cfg.grid.method)


# ------------------------------------------------------------------ running


def derive_seed(global_seed: int, seed: int, stream: int) -> int:
    ss = np.random.SeedSequence([global_seed & 0xFFFFFFFFFFFFFFFF, seed & 0xFFFFFFFFFFFFFFFF, stream])
    return int(ss.generate_state(1, np.uint32)[0])


_STREAM_DATA, _STREAM_CATALOG, _STREAM_AUGMENT, _STREAM_PROJECTION = range(4)


@dataclass
class SeedResult:
    method: str
    seed: int
    labels: np.ndarray
    predicted: np.ndarray
    confidence: np.ndarray
    failed: np.ndarray
    atfd: np.ndarray
    mtas: np.ndarray
    wall_time: float
    snapshot: dict | None = None

    @property
    def scored(self) -> np.ndarray:
        return ~self.failed

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    @property
    def accuracy(self) -> float:
        s = self.scored
        return float(np.mean(self.predicted[s] == self.labels[s])) if s.any() else float("nan")

    def ece_and_bins(self, n_bins: int):
        s = self.scored
        if not s.any():
            edges = np.arange(n_bins + 1) / n_bins
            return float("nan"), [BinStats(k + 1, float(edges[k]), float(edges[k + 1]), 0, 0.0, 0.0)
                                  for k in range(n_bins)]
        return ece_arrays(self.confidence[s], self.predicted[s] == self.labels[s], n_bins)

    @property
    def mean_atfd(self) -> float:
        s = self.scored
        return float(np.mean(self.atfd[s])) if s.any() else float("nan")

    @property
    def mean_mtas(self) -> float:
        s = self.scored
        return float(np.mean(self.mtas[s])) if s.any() else float("nan")


@dataclass
class ResultRow:
    method: str
    seed: int
    n_samples: int
    n_failed: int
    accuracy: float
    ece: float
    atfd: float
    mtas: float
    wall_time: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[SeedResult]

    def rows(self) -> list[ResultRow]:
        out = []
        for r in self.runs:
            value, _ = r.ece_and_bins(self.config.n_bins)
            out.append(ResultRow(r.method, r.seed, len(r.labels), r.n_failed, r.accuracy, value,
                                 r.mean_atfd, r.mean_mtas, r.wall_time))
        return out

    def get(self, method: str, seed: int) -> SeedResult:
        for r in self.runs:
            if r.method == method and r.seed == seed:
                return r
        raise KeyError((method, seed))

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.runs)


def _catalog_for(cfg: ExperimentConfig, seed: int, n_classes: int) -> AttributeCatalog:
    if cfg.catalog.path is not None:
        return load_catalog(cfg.catalog.path, strict=cfg.catalog.strict)
    return synthetic_catalog(n_classes, cfg.catalog.synthetic_attributes,
                             seed=derive_seed(cfg.global_seed, seed, _STREAM_CATALOG))


def encoder_config(cfg: ExperimentConfig) -> EncoderConfig:
    """Encoder with its projection seed mixed with the global seed; fixed across run seeds."""
    return dataclasses.replace(
        cfg.encoder,
        projection_seed=derive_seed(cfg.global_seed, cfg.encoder.projection_seed, _STREAM_PROJECTION),
    )


def load_dataset(cfg: ExperimentConfig, source: DatasetSource, seed: int, ctx: ZeroShotContext):
    """(bundle, catalog) for one run seed."""
    if source.bundle is not None:
        bundle = read_bundle(source.bundle)
        catalog = _catalog_for(cfg, seed, bundle.n_classes)
        return bundle, catalog
    spec = dataclasses.replace(source.synthetic, seed=derive_seed(cfg.global_seed, seed, _STREAM_DATA))
    catalog = _catalog_for(cfg, seed, spec.n_classes)
    return generate(spec, catalog, ctx), catalog


def _prompts_for(method: MethodDescriptor, cfg: ExperimentConfig, bundle: FeatureBundle,
                 catalog: AttributeCatalog, ctx: ZeroShotContext):
    templates = cfg.ensemble_templates if method.ensemble else (cfg.template,)
    ranked = None
    if method.use_attributes:
        ranked = {}
        for name in bundle.class_names:
            if name in catalog:
                ranked[name] = rank_attributes(name, catalog[name], ctx.encoder, ctx.global_seed, method.top_m)
            elif not cfg.permissive_attributes:
                raise ConfigValidationError(f"class {name!r} is missing from the attribute catalog")
    return [init_prompt(t, bundle.class_names, ctx, ranked, permissive=cfg.permissive_attributes)
            for t in templates]


def run_method(method: MethodDescriptor, cfg: ExperimentConfig, seed: int, bundle: FeatureBundle,
               catalog: AttributeCatalog, ctx: ZeroShotContext, view_cache: dict | None = None) -> SeedResult:
    start = time.perf_counter()
    prompts = _prompts_for(method, cfg, bundle, catalog, ctx)
    features = bundle.image_features.astype(np.float64)
    n = len(features)
    predicted = np.zeros(n, dtype=np.int64)
    confidence = np.zeros(n)
    failed = np.zeros(n, dtype=bool)
    atfd_vals = np.zeros(n)
    mtas_vals = np.zeros(n)
    tau = ctx.classifier.temperature
    aug = AugmentationConfig(cfg.tuner.n_views, cfg.augmentation.noise_sigma,
                             cfg.augmentation.dropout_fraction,
                             derive_seed(cfg.global_seed, seed, _STREAM_AUGMENT))
    tuner_cfg = dataclasses.replace(cfg.tuner, n_steps=max(method.n_steps, 1), weights=method.weights)
    snapshot_prompts = None

    if method.n_steps == 0:
        images = ctx.encoder.encode_images(features)
        logits = np.mean([class_logits(images, class_text_embeddings(p, ctx), tau) for p in prompts], axis=0)
        probs = softmax(logits)
        predicted[:] = probs.argmax(axis=1)
        confidence[:] = probs[np.arange(n), predicted]
        stats = [dispersion_summary(prompt_class_set(p, ctx)) for p in prompts]
        atfd_vals[:] = np.mean([s[0] for s in stats])
        mtas_vals[:] = np.mean([s[1] for s in stats])
        snapshot_prompts = prompts
    else:
        images = ctx.encoder.encode_images(features)
        for i in range(n):
            views = None if view_cache is None else view_cache.get(i)
            if views is None:
                views = view_embeddings(features[i], cfg.tuner.n_views, aug, ctx)
                if view_cache is not None:
                    view_cache[i] = views
            try:
                tuned = [tune_on_sample(features[i], p, tuner_cfg, aug, ctx, views=views).prompt for p in prompts]
                logits = np.mean([class_logits(images[i], class_text_embeddings(p, ctx), tau) for p in tuned], axis=0)
                if not np.all(np.isfinite(logits)):
                    raise NumericFailureError("non-finite logits after tuning")
            except NumericFailureError as exc:
                log.warning("seed %s method %s sample %d failed: %s", seed, method.name, i, exc)
                failed[i] = True
                continue
            probs = softmax(logits)
            predicted[i] = int(np.argmax(probs))
            confidence[i] = probs[predicted[i]]
            stats = [dispersion_summary(prompt_class_set(p, ctx)) for p in tuned]
            atfd_vals[i] = np.mean([s[0] for s in stats])
            mtas_vals[i] = np.mean([s[1] for s in stats])
            if i == cfg.snapshot_sample:
                snapshot_prompts = tuned
    snapshot = None
    if snapshot_prompts is not None:
        p = snapshot_prompts[0]
        cs = prompt_class_set(p, ctx)
        snapshot = {
            "sample": cfg.snapshot_sample,
            "template": p.template,
            "class_names": list(p.class_names),
            "owner": cs.owner.tolist(),
            "attributes": [list(a) for a in p.attributes],
            "embeddings": cs.embeddings.tolist(),
        }
    return SeedResult(method.name, seed, bundle.true_labels.astype(np.int64), predicted, confidence, failed,
                      atfd_vals, mtas_vals, time.perf_counter() - start, snapshot)


def execute(cfg: ExperimentConfig, methods=None, source: DatasetSource | None = None) -> ExperimentResult:
    """Run every (method, seed) cell in memory."""
    methods = list(cfg.methods if methods is None else methods)
    source = source or cfg.dataset
    ctx = ZeroShotContext.from_config(encoder_config(cfg), cfg.classifier, cfg.global_seed)
    runs = []
    for seed in cfg.seeds:
        bundle, catalog = load_dataset(cfg, source, seed, ctx)
        views: dict = {}
        for m in methods:
            log.info("seed %s: running %s on %d samples", seed, m.name, bundle.n_samples)
            runs.append(run_method(m, cfg, seed, bundle, catalog, ctx, views))
    return ExperimentResult(cfg, runs)


# ------------------------------------------------------------------ outputs


def _fmt(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _json_value(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def _write_tsv(path: Path, header, rows) -> None:
    lines = ["\t".join(header)]
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_results(result: ExperimentResult, out_dir) -> Path:
    cfg = result.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"tcalib_version": __version__, "config": config_to_dict(cfg)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    record_rows = []
    for r in result.runs:
        for i in range(len(r.labels)):
            status = "failed" if r.failed[i] else "scored"
            record_rows.append((r.seed, r.method, i, int(r.predicted[i]) if not r.failed[i] else -1,
                                int(r.labels[i]), float(r.confidence[i]), status))
    _write_tsv(out / "records.tsv", ("seed", "method", "sample_id", "predicted", "true", "confidence", "status"),
               record_rows)

    rows = result.rows()
    header = ("method", "seed", "n_samples", "n_failed", "accuracy", "ece", "atfd", "mtas")
    _write_tsv(out / "aggregate.tsv", header,
               [(r.method, r.seed, r.n_samples, r.n_failed, r.accuracy, r.ece, r.atfd, r.mtas) for r in rows])
    # NaN (every sample of a cell failed) becomes null in JSON
    agg = [{k: _json_value(getattr(r, k)) for k in header} for r in rows]
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2) + "\n", encoding="utf-8")
    _write_tsv(out / "timings.tsv", ("method", "seed", "wall_time"), [(r.method, r.seed, r.wall_time) for r in rows])

    reliability = []
    for r in result.runs:
        _, bins = r.ece_and_bins(cfg.n_bins)
        reliability.append({"method": r.method, "seed": r.seed, "bins": [dataclasses.asdict(b) for b in bins]})
    (out / "reliability.json").write_text(json.dumps(reliability, indent=2) + "\n", encoding="utf-8")
    snaps = [{"method": r.method, "seed": r.seed, **r.snapshot} for r in result.runs if r.snapshot]
    (out / "snapshots.json").write_text(json.dumps(snaps) + "\n", encoding="utf-8")
    return out


def run_experiment(config_path, output_dir=None) -> tuple[Path, ExperimentResult]:
    cfg = load_config(config_path)
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(output_dir))
    validate_config(cfg)
    result = execute(cfg)
    return write_results(result, cfg.output_dir), result


# -------------------------------------------------------------- grid search


def _grid_base_method(cfg: ExperimentConfig) -> MethodDescriptor:
    if cfg.grid.method is not None:
        return cfg.method(cfg.grid.method)
    tuned = [m for m in cfg.methods if m.n_steps > 0]
    for m in tuned:
        if m.use_attributes:
            return m
    if tuned:
        return tuned[0]
    raise ConfigValidationError("grid search needs a method with n_steps > 0")


def grid_search(cfg: ExperimentConfig, alpha_grid=None, beta_grid=None, out_dir=None):
    """Pick (alpha, beta) minimizing mean ECE over seeds; ties prefer smaller alpha, then beta.

    Returns ((alpha, beta), table) where table rows are (alpha, beta, mean_ece, mean_accuracy).
    """
    alpha_grid = list(cfg.grid.alpha if alpha_grid is None else alpha_grid)
    beta_grid = list(cfg.grid.beta if beta_grid is None else beta_grid)
    if not alpha_grid or not beta_grid:
        raise InvalidArgumentError("alpha and beta grids must be non-empty")
    base = _grid_base_method(cfg)
    source = cfg.calibration_dataset or cfg.dataset
    cells = [dataclasses.replace(base, name=f"{base.name}[a={a},b={b}]", alpha=float(a), beta=float(b))
             for a in alpha_grid for b in beta_grid]
    result = execute(cfg, methods=cells, source=source)
    table = []
    for cell in cells:
        runs = [r for r in result.runs if r.method == cell.name]
        eces = [r.ece_and_bins(cfg.n_bins)[0] for r in runs]
        accs = [r.accuracy for r in runs]
        table.append((cell.alpha, cell.beta, float(np.mean(eces)), float(np.mean(accs))))
    best = min(table, key=lambda row: (row[2], row[0], row[1]))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_tsv(out / "grid.tsv", ("alpha", "beta", "mean_ece", "mean_accuracy"), table)
        (out / "grid.json").write_text(json.dumps({
            "method": base.name,
            "best": {"alpha": best[0], "beta": best[1], "mean_ece": best[2]},
            "table": [dict(zip(("alpha", "beta", "mean_ece", "mean_accuracy"), row)) for row in table],
        }, indent=2) + "\n", encoding="utf-8")
    return (best[0], best[1]), table


# ---------------------------------------------------------------- plot data


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _read_tsv(path: Path) -> list[dict]:
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]


def emit_plot_data(results_dir) -> list[Path]:
    """Reliability rows, PCA coordinates of tuned prompt embeddings, ECE-vs-dispersion scatter."""
    res = Path(results_dir)
    if not (res / "aggregate.json").is_file():
        raise InvalidArgumentError(f"no results in {res}")
    aggregate = json.loads((res / "aggregate.json").read_text(encoding="utf-8"))
    if not aggregate:
        raise InvalidArgumentError(f"results in {res} are empty")
    manifest = json.loads((res / "manifest.json").read_text(encoding="utf-8"))
    n_bins = manifest["config"]["n_bins"]
    out = res / "plots"
    out.mkdir(exist_ok=True)
    written = []

    by_method: dict[str, list[dict]] = {}
    for rec in _read_tsv(res / "records.tsv"):
        if rec["status"] == "scored":
            by_method.setdefault(rec["method"], []).append(rec)
    for method, recs in by_method.items():
        _, bins = ece([PredictionRecord(int(r["predicted"]), int(r["true"]), float(r["confidence"])) for r in recs],
                      n_bins)
        path = out / f"reliability_{_slug(method)}.tsv"
        _write_tsv(path, ("bin_center", "accuracy", "confidence", "count"),
                   [(b.center, b.accuracy, b.confidence, b.count) for b in bins])
        written.append(path)

    for snap in json.loads((res / "snapshots.json").read_text(encoding="utf-8")):
        emb = np.asarray(snap["embeddings"])
        coords = pca_projection(list(emb), 2) if len(emb) >= 2 and emb.shape[1] > 2 else np.zeros((len(emb), 2))
        rows = []
        per_class_seen: dict[int, int] = {}
        for (x, y), owner in zip(coords, snap["owner"]):
            j = per_class_seen.get(owner, 0)
            per_class_seen[owner] = j + 1
            attrs = snap["attributes"][owner]
            rows.append((x, y, owner, snap["class_names"][owner], attrs[j] if j < len(attrs) else ""))
        path = out / f"pca_{_slug(snap['method'])}_seed{snap['seed']}.tsv"
        _write_tsv(path, ("x", "y", "class_index", "class_name", "attribute"), rows)
        written.append(path)

    path = out / "dispersion_scatter.tsv"
    _write_tsv(path, ("method", "seed", "ece", "atfd", "mtas"),
               [(a["method"], a["seed"], a["ece"], a["atfd"], a["mtas"]) for a in aggregate])
    written.append(path)
    return written
