"""Config-driven audit run: data -> models -> attributions -> global explanations -> agreement."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from xai_concord import __version__
from xai_concord.agreement import (
    AGGREGATION_MODES,
    GlobalExplanation,
    AgreementReport,
    ExpertSet,
    aggregate_global,
    pairwise_report,
)
from xai_concord.dataset import (
    PRNG_ALGORITHM,
    SyntheticSpec,
    correlation_block,
    load_csv,
    standardize,
    synthesize,
)
from xai_concord.errors import ConfigError, StageError, XaiConcordError
from xai_concord.explainers import (
    DTD,
    KINDS,
    LINEAR_COEF,
    SHAPLEY_EXACT,
    AttributionMatrix,
    ExplainConfig,
    explain_dataset,
    sample_background,
)
from xai_concord.models import TrainConfig, train_gbt, train_l1_logistic, train_nn, training_logloss, raw_score
from xai_concord.models.io import save_model
from xai_concord.models.nn import DEFAULT_ARCHITECTURE
from xai_concord.seeding import derive_seed

log = logging.getLogger(__name__)

BUNDLE_SCHEMA = "xai-concord/report"
BUNDLE_VERSION = 1

MODEL_KINDS = ("l1", "gbt", "nn")
EXPLAINER_ALIASES = {"shapley": SHAPLEY_EXACT, "shap": SHAPLEY_EXACT, "linear": LINEAR_COEF}
# explainer -> models it can explain (None: any)
PAIRING_RULES = {DTD: ("nn",), LINEAR_COEF: ("l1",)}

DEFAULT_TRACKS = (
    {"label": "S", "model": "gbt", "explainer": SHAPLEY_EXACT},
    {"label": "L", "model": "l1", "explainer": LINEAR_COEF},
    {"label": "D", "model": "nn", "explainer": DTD},
)
DEFAULT_MODELS = {
    "l1": {"lambda": 0.01, "max_iterations": 5000, "tolerance": 1e-9, "step_size": 1.0},
    "gbt": {"rounds": 50, "max_depth": 3, "learning_rate": 0.1, "reg_lambda": 1.0},
    "nn": {"epochs": 200, "learning_rate": 0.5, "batch_size": 64, "architecture": [dict(l) for l in DEFAULT_ARCHITECTURE]},
}
DEFAULT_N_VALUES = (1, 3, 5, 10)


@dataclass(frozen=True)
class Track:
    label: str
    model: str
    explainer: str


@dataclass
class PipelineConfig:
    data: dict
    models: dict
    tracks: list
    background_size: int = 64
    permutations: int = 1000
    n_values: list = field(default_factory=lambda: list(DEFAULT_N_VALUES))
    aggregation: str = "abs_sum"
    seed: int = 0
    standardize: bool = True
    output_dir: str | None = None
    formats: list = field(default_factory=lambda: ["json", "csv", "svg"])

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        """Validate ``raw`` and fill defaults; every problem found is reported at once."""
        problems = []
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        known = {"data", "models", "tracks", "background_size", "permutations", "n_values",
                 "aggregation", "seed", "standardize", "output_dir", "formats"}
        for k in sorted(set(raw) - known):
            problems.append(f"unknown key {k!r}")

        data = raw.get("data")
        if not isinstance(data, dict) or len(set(data) & {"csv", "synthetic"}) != 1:
            problems.append("data must hold exactly one of 'csv' or 'synthetic'")
            data = {}
        else:
            data = copy.deepcopy(data)
            if "csv" in data:
                c = data["csv"]
                if not isinstance(c, dict) or "path" not in c or "label_column" not in c:
                    problems.append("data.csv needs 'path' and 'label_column'")
                else:
                    p = Path(c["path"])
                    if base_dir is not None and not p.is_absolute():
                        p = base_dir / p
                    c["path"] = str(p)
                    if not p.is_file():
                        problems.append(f"data.csv.path does not exist: {p}")
                    c.setdefault("expert_names", [])
            else:
                problems += _check_synthetic(data["synthetic"])

        models = copy.deepcopy(DEFAULT_MODELS)
        for k, section in (raw.get("models") or {}).items():
            if k not in MODEL_KINDS:
                problems.append(f"unknown model section {k!r} (expected l1, gbt or nn)")
            elif not isinstance(section, dict):
                problems.append(f"models.{k} must be a mapping")
            else:
                models[k].update(section)
        problems += _check_models(models)

        tracks = []
        raw_tracks = raw.get("tracks", list(DEFAULT_TRACKS))
        if not isinstance(raw_tracks, list) or len(raw_tracks) < 2:
            problems.append("tracks must list at least two (label, model, explainer) entries")
            raw_tracks = []
        for i, t in enumerate(raw_tracks):
            if not isinstance(t, dict) or not {"label", "model", "explainer"} <= set(t):
                problems.append(f"tracks[{i}] needs label, model and explainer")
                continue
            kind = EXPLAINER_ALIASES.get(t["explainer"], t["explainer"])
            if t["model"] not in MODEL_KINDS:
                problems.append(f"tracks[{i}]: unknown model {t['model']!r}")
            if kind not in KINDS:
                problems.append(f"tracks[{i}]: unknown explainer {t['explainer']!r}")
            elif kind in PAIRING_RULES and t["model"] not in PAIRING_RULES[kind]:
                problems.append(
                    f"tracks[{i}]: explainer {kind} is incompatible with model {t['model']} "
                    f"({kind} requires {' or '.join(PAIRING_RULES[kind])})")
            tracks.append(Track(str(t["label"]), t["model"], kind))
        labels = [t.label for t in tracks]
        if len(set(labels)) != len(labels):
            problems.append(f"track labels must be unique: {labels}")

        n_values = raw.get("n_values", list(DEFAULT_N_VALUES))
        if not isinstance(n_values, list) or not all(isinstance(n, int) and n >= 1 for n in n_values):
            problems.append("n_values must be a list of positive integers")
            n_values = list(DEFAULT_N_VALUES)
        elif 5 not in n_values:
            problems.append("n_values must include 5")
        elif len(set(n_values)) != len(n_values):
            problems.append("n_values must not repeat")

        aggregation = raw.get("aggregation", "abs_sum")
        if aggregation not in AGGREGATION_MODES:
            problems.append(f"aggregation must be one of {AGGREGATION_MODES}")
        for key in ("background_size", "permutations"):
            v = raw.get(key, 1)
            if not isinstance(v, int) or v < 1:
                problems.append(f"{key} must be a positive integer")
        if isinstance(raw.get("background_size", 64), int) and raw.get("background_size", 64) > 64:
            problems.append("background_size must not exceed 64")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        formats = raw.get("formats", ["json", "csv", "svg"])
        if not isinstance(formats, list) or not set(formats) <= {"json", "csv", "svg"}:
            problems.append("formats must be a subset of [json, csv, svg]")
        out = raw.get("output_dir")
        if out is not None and base_dir is not None and not Path(out).is_absolute():
            out = str(base_dir / out)

        if problems:
            raise ConfigError(problems)
        return cls(
            data=data, models=models, tracks=tracks,
            background_size=raw.get("background_size", 64), permutations=raw.get("permutations", 1000),
            n_values=list(n_values), aggregation=aggregation, seed=seed,
            standardize=bool(raw.get("standardize", True)), output_dir=out, formats=list(formats),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        """Read a JSON or YAML config file; relative paths resolve against its directory."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def canonical(self) -> dict:
        """Config content that determines results (output location excluded)."""
        return {
            "data": self.data, "models": self.models,
            "tracks": [t.__dict__ for t in self.tracks],
            "background_size": self.background_size, "permutations": self.permutations,
            "n_values": self.n_values, "aggregation": self.aggregation, "seed": self.seed,
            "standardize": self.standardize,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_synthetic(s) -> list:
    problems = []
    if not isinstance(s, dict):
        return ["data.synthetic must be a mapping"]
    for k in ("n", "beta"):
        if k not in s:
            problems.append(f"data.synthetic.{k} is required")
    if problems:
        return problems
    try:
        _synthetic_spec(s, seed=0).cholesky()
    except (XaiConcordError, TypeError, ValueError, KeyError) as exc:
        problems.append(f"data.synthetic: {exc}")
    return problems


def _synthetic_spec(s: dict, seed: int) -> SyntheticSpec:
    beta = np.asarray(s["beta"], dtype=float)
    d = int(s.get("d", beta.size))
    if "correlation" in s:
        corr = np.asarray(s["correlation"], dtype=float)
    elif "correlation_block" in s:
        blk = s["correlation_block"]
        corr = correlation_block(d, blk["members"], float(blk["rho"]))
    else:
        corr = None
    names = s.get("names")
    experts = s.get("expert_names")
    names_t = tuple(names) if names else tuple(f"x{j}" for j in range(d))
    if experts is None:
        # Ground-truth informative features stand in for the expert set.
        experts = [names_t[j] for j in range(min(d, beta.size)) if beta[j] != 0]
    return SyntheticSpec(
        d=d, n=int(s["n"]), beta=beta, intercept=float(s.get("intercept", 0.0)), correlation=corr,
        seed=int(s.get("seed", seed)), names=names_t, expert_names=frozenset(experts),
    )


def _check_models(models: dict) -> list:
    problems = []
    l1, gbt, nn = models["l1"], models["gbt"], models["nn"]
    if not _num(l1.get("lambda")) or l1["lambda"] < 0:
        problems.append("models.l1.lambda must be a nonnegative number")
    for sec, name, key in (("l1", l1, "max_iterations"), ("gbt", gbt, "rounds"), ("nn", nn, "epochs"),
                           ("nn", nn, "batch_size")):
        if not isinstance(name.get(key), int) or name[key] < 0 or (key == "batch_size" and name[key] < 1):
            problems.append(f"models.{sec}.{key} must be a {'positive' if key == 'batch_size' else 'nonnegative'} integer")
    if not isinstance(gbt.get("max_depth"), int) or gbt["max_depth"] < 0:
        problems.append("models.gbt.max_depth must be a nonnegative integer")
    for sec, name, key in (("l1", l1, "tolerance"), ("l1", l1, "step_size"), ("nn", nn, "learning_rate")):
        if not _num(name.get(key)) or name[key] <= 0:
            problems.append(f"models.{sec}.{key} must be positive")
    if not _num(gbt.get("learning_rate")) or not 0 < gbt["learning_rate"] <= 1:
        problems.append("models.gbt.learning_rate must lie in (0, 1]")
    if not _num(gbt.get("reg_lambda")) or gbt["reg_lambda"] < 0:
        problems.append("models.gbt.reg_lambda must be nonnegative")
    arch = nn.get("architecture")
    if not isinstance(arch, list) or not arch:
        problems.append("models.nn.architecture must be a non-empty list of layers")
    else:
        for i, layer in enumerate(arch):
            if not isinstance(layer, dict) or layer.get("type") not in ("dense", "conv1d", "relu"):
                problems.append(f"models.nn.architecture[{i}]: layers must be dense, conv1d or relu")
        last = arch[-1]
        if not (isinstance(last, dict) and last.get("type") == "dense" and last.get("units") == 1):
            problems.append("models.nn.architecture must end with a dense layer of 1 unit")
    return problems


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


@dataclass
class TrackResult:
    track: Track
    matrix: AttributionMatrix
    explanation: GlobalExplanation
    diagnostics: dict


@dataclass
class ReportBundle:
    agreement: AgreementReport
    globals: list
    performance: dict
    metadata: dict
    tracks: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    artifact_paths: dict = field(default_factory=dict)
    output_dir: Path | None = None

    def to_dict(self) -> dict:
        return {
            "schema": BUNDLE_SCHEMA,
            "version": BUNDLE_VERSION,
            "agreement": self.agreement.to_dict(),
            "globals": [g.to_dict() for g in self.globals],
            "tracks": [
                {"label": r.track.label, "model": r.track.model, "explainer": r.track.explainer,
                 "diagnostics": r.diagnostics}
                for r in self.tracks
            ],
            "performance": self.performance,
            "artifacts": {k: Path(v).name for k, v in sorted(self.artifact_paths.items())},
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        return run
    return wrap


def _load_data(cfg: PipelineConfig):
    if "csv" in cfg.data:
        c = cfg.data["csv"]
        return _stage("load")(load_csv)(c["path"], c["label_column"], c.get("expert_names", []))
    spec = _synthetic_spec(cfg.data["synthetic"], seed=derive_seed(cfg.seed, "data"))
    return _stage("synthesize")(synthesize)(spec)


def _train(kind: str, data, cfg: PipelineConfig, std_params):
    m = cfg.models[kind]
    seed = derive_seed(cfg.seed, f"model:{kind}")
    if kind == "l1":
        tc = TrainConfig(max_iterations=m["max_iterations"], tolerance=m["tolerance"],
                         learning_rate=m["step_size"], seed=seed)
        return train_l1_logistic(data, m["lambda"], tc, standardization=std_params)
    if kind == "gbt":
        tc = TrainConfig(learning_rate=m["learning_rate"], seed=seed)
        return train_gbt(data, m["rounds"], m["max_depth"], tc, reg_lambda=m["reg_lambda"])
    tc = TrainConfig(max_iterations=m["epochs"], learning_rate=m["learning_rate"],
                     batch_size=m["batch_size"], seed=seed)
    return train_nn(data, m["architecture"], tc)


def _performance(model, data) -> dict:
    s = raw_score(model, data.rows)
    return {
        "train_logloss": training_logloss(model, data.rows, data.labels),
        "accuracy": float(np.mean((s > 0).astype(int) == data.labels)),
    }


def run_pipeline(config: PipelineConfig, output_dir=None) -> ReportBundle:
    """Run every configured track and compare their global explanations.

    Each stage draws its seed from ``derive_seed(config.seed, stage)``, so a
    track's results do not depend on which other tracks are enabled. When an
    output directory is given, model documents and per-track attribution CSVs
    are written there.
    """
    out = Path(output_dir or config.output_dir) if (output_dir or config.output_dir) else None
    data = _load_data(config)
    if config.standardize:
        train, std_params = _stage("standardize")(standardize)(data)
    else:
        train, std_params = data, None

    needed = [k for k in MODEL_KINDS if any(t.model == k for t in config.tracks)]
    models, performance = {}, {}
    for kind in needed:
        log.info("training %s", kind)
        models[kind] = _stage(f"train:{kind}")(_train)(kind, train, config, std_params)
        performance[kind] = _performance(models[kind], train)

    bg_seed = derive_seed(config.seed, "background")
    background = _stage("background")(sample_background)(train, config.background_size, bg_seed)

    results = []
    for t in config.tracks:
        log.info("explaining track %s (%s on %s)", t.label, t.explainer, t.model)
        ecfg = ExplainConfig(permutations=config.permutations, seed=derive_seed(config.seed, f"explain:{t.label}"))
        matrix = _stage(f"explain:{t.label}")(explain_dataset)(models[t.model], train, t.explainer, background, ecfg)
        g = aggregate_global(matrix, config.aggregation, label=t.label)
        diag = {"negative_explained": int(np.sum(matrix.explained < 0))}
        if t.explainer == DTD:
            gap = matrix.values.sum(axis=1) - matrix.explained
            diag["conservation_gap_max_abs"] = float(np.max(np.abs(gap)))
            diag["conservation_gap_mean"] = float(np.mean(gap))
        results.append(TrackResult(t, matrix, g, diag))

    expert = ExpertSet(frozenset(train.expert_names))
    metadata = {
        "package_version": __version__,
        "prng": PRNG_ALGORITHM,
        "master_seed": config.seed,
        "config_digest": config.digest(),
        "seeds": {
            "background": bg_seed,
            **{f"model:{k}": derive_seed(config.seed, f"model:{k}") for k in needed},
            **{f"explain:{t.label}": derive_seed(config.seed, f"explain:{t.label}") for t in config.tracks},
        },
        "dataset": {"n": train.n, "d": train.d, "features": train.names, "positive_rate": float(train.labels.mean())},
        "background_rows": background.m,
        "aggregation": config.aggregation,
    }
    if "synthetic" in config.data:
        metadata["seeds"]["data"] = _synthetic_spec(config.data["synthetic"], derive_seed(config.seed, "data")).seed
    report = _stage("agreement")(pairwise_report)([r.explanation for r in results], config.n_values, expert)

    bundle = ReportBundle(report, [r.explanation for r in results], performance, metadata, results, models,
                          output_dir=out)
    if out is not None:
        _stage("write-artifacts")(_write_artifacts)(bundle, out)
    return bundle


def _write_artifacts(bundle: ReportBundle, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for kind, model in bundle.models.items():
        bundle.artifact_paths[f"model_{kind}"] = save_model(model, out / f"model_{kind}.json")
    for r in bundle.tracks:
        bundle.artifact_paths[f"attributions_{r.track.label}"] = r.matrix.to_csv(out / f"attributions_{r.track.label}.csv")


CORRELATION_BETA = (3.0, 0.0, 0.0, 0.0, 0.0, 0.0)
CORRELATED_MEMBERS = (0, 1, 2)
CORRELATED_RHO = 0.95


def correlation_configs(seed: int, n: int = 5000) -> tuple:
    """Matched configs: identity correlation vs. 0.95 among the informative feature and two decoys."""
    base = {
        "data": {"synthetic": {"n": n, "beta": list(CORRELATION_BETA), "seed": derive_seed(seed, "correlation-data")}},
        "seed": seed,
    }
    corr = copy.deepcopy(base)
    corr["data"]["synthetic"]["correlation_block"] = {"members": list(CORRELATED_MEMBERS), "rho": CORRELATED_RHO}
    return PipelineConfig.from_dict(base), PipelineConfig.from_dict(corr)


def delta_table(identity: AgreementReport, correlated: AgreementReport) -> list:
    """One row per (pair, n): FA and RA under both runs and their difference (correlated - identity)."""
    rows = []
    for p in identity.pairs:
        q = correlated.lookup(p.label_a, p.label_b, p.n)
        rows.append({
            "pair": p.pair, "n": p.n,
            "FA_identity": p.fa, "FA_correlated": q.fa, "FA_delta": q.fa - p.fa,
            "RA_identity": p.ra, "RA_correlated": q.ra, "RA_delta": q.ra - p.ra,
        })
    return rows


def run_correlation_scenario(seed: int, n: int = 5000, output_dir=None) -> tuple:
    """Run the identity and correlated scenarios; returns ``(identity, correlated, delta_rows)``."""
    out = Path(output_dir) if output_dir is not None else None
    c_id, c_corr = correlation_configs(seed, n)
    b_id = run_pipeline(c_id, out / "identity" if out else None)
    b_corr = run_pipeline(c_corr, out / "correlated" if out else None)
    return b_id, b_corr, delta_table(b_id.agreement, b_corr.agreement)
