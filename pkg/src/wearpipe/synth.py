"""Seeded synthetic cohorts in the four-limb recording format.

Each subject wears four devices over a number of sessions. A session lists
every activity class once, in random order, separated by null gaps. Class
motion is a per-limb mixture of two sinusoids on top of a 1 g gravity term on
the device x axis. Orientation flips (a 180 degree turn about z, negating x
and y) and left/right swaps are sampled per session and logged.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .ingest import (
    LIMBS,
    SAMPLE_RATE_HZ,
    WEAR_CLASSES,
    LimbId,
    Recording,
    Vocabulary,
    load_recording,
    save_recording,
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    subjects: int = 6
    classes: int = 6
    activity_duration_s: tuple[float, float] = (60.0, 90.0)
    null_gap_s: tuple[float, float] = (5.0, 15.0)
    sessions_per_subject: int = 2
    # a float applies to every limb and session; a mapping takes keys
    # "left_leg" (all sessions) or "left_leg:2" (one session, 1-based)
    orientation_flip_prob: float | Mapping[str, float] = 0.0
    limb_swap_prob: float = 0.0
    noise_std_g: float = 0.5
    subject_variation: float = 0.35
    # slow amplitude modulation within an activity: depth in [0, 1), period range in s
    envelope_depth: float = 0.5
    envelope_period_s: tuple[float, float] = (5.0, 20.0)

    def __post_init__(self):
        if self.subjects < 1 or self.sessions_per_subject < 1:
            raise InvalidConfig("subjects and sessions_per_subject must be >= 1")
        if not 1 <= self.classes <= len(WEAR_CLASSES) - 1:
            raise InvalidConfig(f"classes must lie in 1..{len(WEAR_CLASSES) - 1}")
        for name in ("activity_duration_s", "null_gap_s", "envelope_period_s"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InvalidConfig(f"{name} must be a positive (low, high) range")
        probs = (self.orientation_flip_prob.values() if isinstance(self.orientation_flip_prob, Mapping)
                 else [self.orientation_flip_prob])
        for p in [*probs, self.limb_swap_prob]:
            if not 0.0 <= p <= 1.0:
                raise InvalidConfig("probabilities must lie in [0, 1]")
        if isinstance(self.orientation_flip_prob, Mapping):
            limbs = {l.value for l in LIMBS}
            for key in self.orientation_flip_prob:
                if key.split(":")[0] not in limbs:
                    raise InvalidConfig(f"unknown limb in orientation_flip_prob: {key!r}")
        if self.noise_std_g < 0 or not 0 <= self.subject_variation < 1:
            raise InvalidConfig("noise_std_g must be >= 0 and subject_variation in [0, 1)")
        if not 0 <= self.envelope_depth < 1:
            raise InvalidConfig("envelope_depth must lie in [0, 1)")

    def flip_prob(self, limb: LimbId, session: int) -> float:
        p = self.orientation_flip_prob
        if not isinstance(p, Mapping):
            return float(p)
        return float(p.get(f"{limb.value}:{session}", p.get(limb.value, 0.0)))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.orientation_flip_prob, Mapping):
            d["orientation_flip_prob"] = dict(self.orientation_flip_prob)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        for key in ("activity_duration_s", "null_gap_s", "envelope_period_s"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown synth options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ClassSignature:
    frequency_hz: float
    amplitude: np.ndarray  # (limb, axis)
    phase: np.ndarray  # (limb, axis)
    harmonic: float  # second-harmonic amplitude relative to the first


@dataclass
class SynthCohort:
    recordings: list[Recording]
    vocabulary: Vocabulary
    log: list[dict] = field(default_factory=list)
    session_bounds: dict[str, list[int]] = field(default_factory=dict)
    config: SynthConfig | None = None


def synth_vocabulary(classes: int) -> Vocabulary:
    return Vocabulary(WEAR_CLASSES[: classes + 1])


def class_signatures(cfg: SynthConfig, rng: np.random.Generator) -> list[ClassSignature]:
    """Distinct per-class motion patterns shared by every subject.

    Classes alternate between arm-dominant and leg-dominant motion; left and
    right limbs share amplitudes and move either in phase or in anti-phase.
    """
    freqs = np.linspace(0.5, 4.0, cfg.classes) if cfg.classes > 1 else np.array([1.5])
    freqs = rng.permutation(freqs)
    sigs = []
    for c in range(cfg.classes):
        dominant = ("arm", "leg")[c % 2]
        amp = np.empty((len(LIMBS), 3))
        phase = np.empty((len(LIMBS), 3))
        for level in ("arm", "leg"):
            lo, hi = (1.0, 2.0) if level == dominant else (0.2, 0.6)
            a = rng.uniform(lo, hi, 3)
            p = rng.uniform(0, 2 * np.pi, 3)
            anti = rng.random() < 0.5
            for limb in LIMBS:
                if limb.value.endswith(level):
                    amp[limb.index] = a
                    phase[limb.index] = p + (np.pi if anti and limb.value.startswith("right") else 0.0)
        sigs.append(ClassSignature(float(freqs[c]), amp, phase, float(rng.uniform(0.1, 0.5))))
    return sigs


def _segment(sig: ClassSignature | None, n: int, cfg: SynthConfig, rng, limb_scale, freq_scale) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE_HZ
    out = np.zeros((n, len(LIMBS), 3))
    out[:, :, 0] = 1.0
    if sig is not None:
        f = sig.frequency_hz * freq_scale
        offset = rng.uniform(0, 2 * np.pi)
        arg = 2 * np.pi * f * t[:, None, None] + sig.phase[None] + offset
        motion = np.sin(arg) + sig.harmonic * np.sin(2 * arg)
        if cfg.envelope_depth > 0:
            period = rng.uniform(*cfg.envelope_period_s)
            env = 1 + cfg.envelope_depth * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
            motion = motion * env[:, None, None]
        out += sig.amplitude[None] * limb_scale[None, :, None] * motion
    if cfg.noise_std_g > 0:
        out += rng.normal(scale=cfg.noise_std_g, size=out.shape)
    return out


def _swap(acc: np.ndarray, a: LimbId, b: LimbId) -> None:
    acc[:, [a.index, b.index]] = acc[:, [b.index, a.index]]


def _subject(cfg, sigs, subject_id, ss: np.random.SeedSequence):
    rng = np.random.default_rng(ss)
    v = cfg.subject_variation
    limb_scale = rng.uniform(1 - v, 1 + v, len(LIMBS))
    freq_scale = rng.uniform(1 - v / 2, 1 + v / 2, cfg.classes)
    to_samples = lambda lo, hi: int(rng.integers(round(lo * SAMPLE_RATE_HZ), round(hi * SAMPLE_RATE_HZ) + 1))

    chunks, labels, log, bounds, pos = [], [], [], [0], 0
    for session in range(1, cfg.sessions_per_subject + 1):
        sess_acc, sess_lab = [], []
        for c in rng.permutation(cfg.classes):
            for sig, lab, rng_range in ((None, 0, cfg.null_gap_s), (sigs[c], c + 1, cfg.activity_duration_s)):
                n = to_samples(*rng_range)
                sess_acc.append(_segment(sig, n, cfg, rng, limb_scale, freq_scale[c]))
                sess_lab.append(np.full(n, lab, dtype=np.int64))
        n = to_samples(*cfg.null_gap_s)
        sess_acc.append(_segment(None, n, cfg, rng, limb_scale, 1.0))
        sess_lab.append(np.zeros(n, dtype=np.int64))
        acc = np.concatenate(sess_acc)

        for limb in LIMBS:
            if rng.random() < cfg.flip_prob(limb, session):
                acc[:, limb.index, :2] *= -1
                log.append({"subject": subject_id, "session": session, "kind": "flip", "limb": limb.value})
        for a, b in ((LimbId.LEFT_ARM, LimbId.RIGHT_ARM), (LimbId.LEFT_LEG, LimbId.RIGHT_LEG)):
            if rng.random() < cfg.limb_swap_prob:
                _swap(acc, a, b)
                log.append({"subject": subject_id, "session": session, "kind": "swap", "level": a.level})
        chunks.append(acc)
        labels.extend(sess_lab)
        pos += len(acc)
        bounds.append(pos)
    rec = Recording(subject_id, np.concatenate(chunks), np.concatenate(labels))
    return rec, log, bounds


def generate(cfg: SynthConfig) -> SynthCohort:
    """Build a labeled cohort; identical configs give bit-identical cohorts."""
    root = np.random.SeedSequence(cfg.seed)
    class_ss, *subject_ss = root.spawn(cfg.subjects + 1)
    sigs = class_signatures(cfg, np.random.default_rng(class_ss))
    recs, log, bounds = [], [], {}
    width = len(str(cfg.subjects - 1))
    for i, ss in enumerate(subject_ss):
        sid = f"sbj_{i:0{width}d}"
        rec, sub_log, sub_bounds = _subject(cfg, sigs, sid, ss)
        recs.append(rec)
        log.extend(sub_log)
        bounds[sid] = sub_bounds
    return SynthCohort(recs, synth_vocabulary(cfg.classes), log, bounds, cfg)


def write_cohort(cohort: SynthCohort, directory: str | Path) -> Path:
    """One CSV per subject plus ``vocabulary.txt`` and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in cohort.recordings:
        save_recording(rec, directory / f"{rec.subject_id}.csv", cohort.vocabulary)
    cohort.vocabulary.save(directory / "vocabulary.txt")
    manifest = {
        "subjects": [r.subject_id for r in cohort.recordings],
        "config": cohort.config.to_dict() if cohort.config else None,
        "session_bounds": cohort.session_bounds,
        "log": cohort.log,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_cohort(directory: str | Path, vocabulary: Vocabulary | None = None) -> tuple[list[Recording], Vocabulary]:
    """Read every recording CSV of a directory.

    Without an explicit vocabulary the directory's ``vocabulary.txt`` is
    used, falling back to the full activity list.
    """
    directory = Path(directory)
    vocab_path = directory / "vocabulary.txt"
    vocab = vocabulary
    if vocab is None:
        vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else Vocabulary(WEAR_CLASSES)
    manifest = directory / "manifest.json"
    if manifest.exists():
        paths = [directory / f"{s}.csv" for s in json.loads(manifest.read_text())["subjects"]]
    else:
        paths = sorted(directory.glob("*.csv"))
    return [load_recording(p, vocab) for p in paths], vocab
