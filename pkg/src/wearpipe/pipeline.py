"""End-to-end composition: extraction with caching, grouped cross-validation
and the full prediction chain."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augment import MODES, aggregate_variants, apply_mode
from .errors import InvalidConfig, TooFewSubjects
from .evaluation import EvalReport, FoldAssignment, grouped_kfold, macro_f1
from .features import FeatureMatrix, WindowPlan, extract
from .ingest import Recording, Vocabulary
from .model import GbdtConfig, GbdtModel, fit, predict_proba
from .postprocess import (
    RuleBoostConfig,
    SmoothingConfig,
    expand_to_samples,
    fold_sum,
    rule_boost,
    smooth,
)
from .probability import ProbabilityMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "raw"
    plan: WindowPlan = field(default_factory=WindowPlan)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    rule_boost: RuleBoostConfig = field(default_factory=RuleBoostConfig)
    apply_rule_boost: bool = True
    folds: int = 3
    seed: int = 0
    threads: int = 1
    cache_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.folds < 2:
            raise InvalidConfig("folds must be >= 2")
        if self.threads < 1:
            raise InvalidConfig("threads must be >= 1")

    @property
    def channel_config(self) -> str:
        return "smv" if self.mode == "smv" else "raw"

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        """Build from nested plain data (as read from a YAML/JSON file)."""
        d = dict(d)
        nested = {"plan": WindowPlan, "gbdt": GbdtConfig, "smoothing": SmoothingConfig,
                  "rule_boost": RuleBoostConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown pipeline options: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in d and isinstance(d[key], Mapping):
                sub = dict(d[key])
                allowed = {f.name for f in fields(typ)}
                if set(sub) - allowed:
                    raise InvalidConfig(f"unknown {key} options: {sorted(set(sub) - allowed)}")
                for k, v in sub.items():
                    if isinstance(v, list):
                        sub[k] = tuple(v)
                try:
                    d[key] = typ(**sub)
                except TypeError as exc:
                    raise InvalidConfig(f"bad {key} options: {exc}") from exc
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# --------------------------------------------------------------------------
# extraction
# --------------------------------------------------------------------------


def _cache_key(rec: Recording, plan: WindowPlan, channel_config: str) -> str:
    h = hashlib.sha256()
    h.update(rec.subject_id.encode())
    h.update(np.ascontiguousarray(rec.acc).tobytes())
    if rec.labels is not None:
        h.update(np.ascontiguousarray(rec.labels).tobytes())
    h.update(repr((plan, channel_config, rec.sample_rate_hz)).encode())
    return h.hexdigest()[:24]


def extract_cohort(recordings: Sequence[Recording], plan: WindowPlan, channel_config: str = "raw",
                   threads: int = 1, cache_dir: str | Path | None = None) -> list[FeatureMatrix]:
    """Extract every recording, reusing ``cache_dir`` entries when present."""
    out = []
    for rec in recordings:
        path = None
        if cache_dir is not None:
            path = Path(cache_dir) / f"{rec.subject_id}-{_cache_key(rec, plan, channel_config)}.npz"
            if path.exists():
                m = FeatureMatrix.load(path)
                out.append(FeatureMatrix(m.values, m.columns, m.recording_ids, m.timesteps,
                                         m.variants, m.labels, m.config, plan))
                continue
        m = extract(rec, plan, channel_config, threads=threads)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            m.save(path)
        out.append(m)
    return out


# --------------------------------------------------------------------------
# prediction chain
# --------------------------------------------------------------------------


def timestep_probabilities(model: GbdtModel, features: FeatureMatrix) -> ProbabilityMatrix:
    """Model probabilities per (recording, timestep), variants soft-voted."""
    m = apply_mode(features, model.mode if model.mode in MODES else "raw")
    return aggregate_variants(predict_proba(model, m))


@dataclass
class RecordingPrediction:
    recording_id: str
    summed: np.ndarray  # (timesteps, classes) fold sums
    smoothed: np.ndarray  # normalized, after temporal smoothing
    step_labels: np.ndarray
    sample_labels: np.ndarray


def postprocess_recording(summed: np.ndarray, n_samples: int, cfg: PipelineConfig, rid: str = "",
                          sample_rate_hz: int = 50) -> RecordingPrediction:
    """Normalize, smooth, take the argmax, boost and expand one recording."""
    P = summed / summed.sum(axis=1, keepdims=True)
    pm = ProbabilityMatrix(P, [rid] * len(P), np.arange(len(P)), stride_s=cfg.plan.stride_s)
    smoothed = smooth(pm, cfg.smoothing).values
    labels = smoothed.argmax(axis=1)
    if cfg.apply_rule_boost:
        labels = rule_boost(summed, labels, cfg.rule_boost, stride_s=cfg.plan.stride_s)
    samples = expand_to_samples(labels, n_samples, sample_rate_hz, cfg.plan.stride_s)
    return RecordingPrediction(rid, summed, smoothed, labels, samples)


def predict_recordings(models: Sequence[GbdtModel], recordings: Sequence[Recording],
                       cfg: PipelineConfig, features: Sequence[FeatureMatrix] | None = None
                       ) -> list[RecordingPrediction]:
    """Full chain: extract, per-model probabilities, fold vote, smoothing, boost, expansion."""
    if features is None:
        features = extract_cohort(recordings, cfg.plan, cfg.channel_config, cfg.threads, cfg.cache_dir)
    out = []
    for rec, m in zip(recordings, features):
        per_model = [timestep_probabilities(model, m) for model in models]
        summed = fold_sum(per_model)
        out.append(postprocess_recording(summed.values, rec.n_samples, cfg, rec.subject_id,
                                         rec.sample_rate_hz))
    return out


def train_model(recordings: Sequence[Recording], cfg: PipelineConfig, vocabulary: Vocabulary,
                features: Sequence[FeatureMatrix] | None = None) -> GbdtModel:
    """Fit one model on every labeled recording."""
    if features is None:
        features = extract_cohort(recordings, cfg.plan, cfg.channel_config, cfg.threads, cfg.cache_dir)
    model = fit(apply_mode(FeatureMatrix.concat(features), cfg.mode), cfg.gbdt, n_classes=len(vocabulary))
    model.class_names = tuple(vocabulary.names)
    return model


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


@dataclass
class CVResult:
    folds: FoldAssignment
    models: list[GbdtModel]
    oof: ProbabilityMatrix  # out-of-fold probabilities, one row per labeled timestep
    report: EvalReport  # sample-wise, argmax of the raw probabilities
    report_pp: EvalReport  # sample-wise, after temporal smoothing
    report_boost: EvalReport  # sample-wise, smoothing plus rule boosting
    timestep_f1: float  # per-timestep scores before expansion
    timestep_f1_pp: float

    @property
    def f1(self) -> float:
        return self.report.macro_f1

    @property
    def f1_pp(self) -> float:
        return self.report_pp.macro_f1

    def summary(self) -> dict:
        return {
            "folds": self.folds.fold_count,
            "subject_fold": dict(sorted(self.folds.subject_fold.items())),
            "f1": self.f1,
            "f1_pp": self.f1_pp,
            "f1_pp_boost": self.report_boost.macro_f1,
            "timestep_f1": self.timestep_f1,
            "timestep_f1_pp": self.timestep_f1_pp,
        }


def run_cv(recordings: Sequence[Recording], cfg: PipelineConfig, vocabulary: Vocabulary,
           features: Sequence[FeatureMatrix] | None = None, progress=None) -> CVResult:
    """Grouped k-fold training and pooled out-of-fold evaluation.

    ``features`` may hold precomputed matrices (one per recording, in the
    channel layout ``cfg`` needs) so several modes can share one extraction.
    """
    if any(r.labels is None for r in recordings):
        raise InvalidConfig("cross-validation needs labeled recordings")
    subjects = [r.subject_id for r in recordings]
    if len(set(subjects)) < cfg.folds:
        raise TooFewSubjects(f"need at least {cfg.folds} subjects, got {len(set(subjects))}")
    if features is None:
        features = extract_cohort(recordings, cfg.plan, cfg.channel_config, cfg.threads, cfg.cache_dir)
    assignment = grouped_kfold(subjects, cfg.folds, cfg.seed)
    n_classes = len(vocabulary)

    models: list[GbdtModel] = []
    oof: dict[str, np.ndarray] = {}
    for fold in range(cfg.folds):
        train = [m for r, m in zip(recordings, features) if assignment.fold_of(r.subject_id) != fold]
        test = [(r, m) for r, m in zip(recordings, features) if assignment.fold_of(r.subject_id) == fold]
        train_m = apply_mode(FeatureMatrix.concat(train), cfg.mode)
        log.info("fold %d: training on %d rows x %d columns", fold, train_m.n_rows, train_m.n_columns)
        model = fit(train_m, cfg.gbdt, n_classes=n_classes)
        model.class_names = tuple(vocabulary.names)
        del train_m
        models.append(model)
        for rec, m in test:
            oof[rec.subject_id] = timestep_probabilities(model, m).values
        if progress is not None:
            progress(fold, model)

    parts, truth_steps, truth_samples, pred = [], [], [], {"raw": [], "pp": [], "boost": []}
    step_pred = {"raw": [], "pp": []}
    subj_samples = []
    for rec, m in zip(recordings, features):
        P = oof[rec.subject_id]
        parts.append(ProbabilityMatrix(P, m.recording_ids, m.timesteps, stride_s=cfg.plan.stride_s))
        chain = postprocess_recording(P, rec.n_samples, cfg.with_overrides(apply_rule_boost=True),
                                      rec.subject_id, rec.sample_rate_hz)
        raw_steps = P.argmax(axis=1)
        smooth_steps = chain.smoothed.argmax(axis=1)
        rate, stride = rec.sample_rate_hz, cfg.plan.stride_s
        pred["raw"].append(expand_to_samples(raw_steps, rec.n_samples, rate, stride))
        pred["pp"].append(expand_to_samples(smooth_steps, rec.n_samples, rate, stride))
        pred["boost"].append(chain.sample_labels)
        step_pred["raw"].append(raw_steps)
        step_pred["pp"].append(smooth_steps)
        truth_samples.append(rec.labels)
        truth_steps.append(m.labels)
        subj_samples.append(np.full(rec.n_samples, rec.subject_id, dtype=object))

    names = list(vocabulary.names)
    truth = np.concatenate(truth_samples)
    subj = np.concatenate(subj_samples)
    reports = {k: macro_f1(truth, np.concatenate(v), n_classes, subj, names) for k, v in pred.items()}
    t_steps = np.concatenate(truth_steps)
    return CVResult(
        assignment, models, ProbabilityMatrix.concat(parts),
        reports["raw"], reports["pp"], reports["boost"],
        macro_f1(t_steps, np.concatenate(step_pred["raw"]), n_classes).macro_f1,
        macro_f1(t_steps, np.concatenate(step_pred["pp"]), n_classes).macro_f1,
    )
