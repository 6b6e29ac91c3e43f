"""Dataset manifests, synthetic vowel corpus generation, splitting, and resampling.

A manifest is a flat CSV (`sample_id,subject_id,age,diagnosis,audio_path,split`)
plus per-sample mono PCM wave files. The synthetic generator produces sustained
"a~" vowels whose dysphonia markers (jitter, shimmer, 4-7 Hz tremor, voicing
interruptions) scale with a per-subject severity, and whose pitch and spectral
tilt correlate with age so an age-predictive confound exists in frequency bands.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.io import wavfile

from .errors import (
    GenerationError,
    InfeasibleResamplingError,
    InvalidArgumentError,
    SchemaError,
)

log = logging.getLogger(__name__)

YOUNG = "young"
ELDERLY = "elderly"
AGE_GROUPS = (YOUNG, ELDERLY)

PD = "PD"
HC = "HC"
DIAGNOSES = (PD, HC)

TRAIN = "train"
TEST = "test"
UNASSIGNED = "unassigned"
SPLITS = (TRAIN, TEST, UNASSIGNED)

AGE_CUTOFF = 55

MANIFEST_HEADER = ["sample_id", "subject_id", "age", "diagnosis", "audio_path", "split"]


def assign_age_group(age: int) -> str:
    """Young iff age <= 55, Elderly otherwise."""
    if age < 0:
        raise InvalidArgumentError(f"age must be non-negative, got {age}")
    return YOUNG if age <= AGE_CUTOFF else ELDERLY


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age: int
    diagnosis: str

    def __post_init__(self):
        if self.age < 0:
            raise InvalidArgumentError(f"subject {self.subject_id}: negative age {self.age}")
        if self.diagnosis not in DIAGNOSES:
            raise InvalidArgumentError(
                f"subject {self.subject_id}: diagnosis must be one of {DIAGNOSES}"
            )

    @property
    def age_group(self) -> str:
        return assign_age_group(self.age)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    subject_id: str
    audio_path: str
    split: str = UNASSIGNED

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidArgumentError(f"sample {self.sample_id}: bad split {self.split!r}")


@dataclass
class DatasetManifest:
    subjects: dict[str, SubjectRecord] = field(default_factory=dict)
    samples: list[SampleRecord] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise InvalidArgumentError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            if s.subject_id not in self.subjects:
                raise InvalidArgumentError(
                    f"sample {s.sample_id}: unknown subject {s.subject_id!r}"
                )

    def subject_of(self, sample: SampleRecord) -> SubjectRecord:
        return self.subjects[sample.subject_id]

    def __len__(self) -> int:
        return len(self.samples)

    def save_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(MANIFEST_HEADER)
            for s in self.samples:
                subj = self.subjects[s.subject_id]
                w.writerow(
                    [s.sample_id, s.subject_id, subj.age, subj.diagnosis, s.audio_path, s.split]
                )

    @classmethod
    def load_csv(cls, path: str | os.PathLike) -> "DatasetManifest":
        subjects: dict[str, SubjectRecord] = {}
        samples: list[SampleRecord] = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or set(MANIFEST_HEADER) - set(reader.fieldnames):
                raise SchemaError(
                    f"{path}: manifest header must contain {MANIFEST_HEADER}, "
                    f"got {reader.fieldnames}"
                )
            for i, row in enumerate(reader, start=2):
                age_raw = (row["age"] or "").strip()
                if not age_raw:
                    # Group membership is required for fairness evaluation.
                    raise SchemaError(f"{path}:{i}: missing age for sample {row['sample_id']!r}")
                try:
                    age = int(age_raw)
                except ValueError:
                    raise SchemaError(f"{path}:{i}: non-integer age {age_raw!r}") from None
                sid = row["subject_id"]
                rec = SubjectRecord(sid, age, row["diagnosis"])
                if sid in subjects and subjects[sid] != rec:
                    raise SchemaError(f"{path}:{i}: conflicting records for subject {sid!r}")
                subjects[sid] = rec
                samples.append(
                    SampleRecord(row["sample_id"], sid, row["audio_path"], row["split"])
                )
        return cls(subjects=subjects, samples=samples)


@dataclass
class ManifestStats:
    counts: dict[tuple[str, str], int]
    ratios: dict[str, float | None]  # PD/HC per group; None when #HC == 0

    @property
    def total_pd(self) -> int:
        return sum(n for (_, d), n in self.counts.items() if d == PD)

    @property
    def total_hc(self) -> int:
        return sum(n for (_, d), n in self.counts.items() if d == HC)


def manifest_stats(manifest: DatasetManifest) -> ManifestStats:
    """Per (age_group, diagnosis) sample counts plus per-group PD/HC ratios."""
    counts = {(g, d): 0 for g in AGE_GROUPS for d in DIAGNOSES}
    for s in manifest.samples:
        subj = manifest.subject_of(s)
        counts[(subj.age_group, subj.diagnosis)] += 1
    ratios: dict[str, float | None] = {}
    for g in AGE_GROUPS:
        hc = counts[(g, HC)]
        ratios[g] = (counts[(g, PD)] / hc) if hc > 0 else None
    return ManifestStats(counts=counts, ratios=ratios)


def split_train_test(
    manifest: DatasetManifest, ratio: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Subject-level split, stratified by (age_group, diagnosis).

    `ratio` is train:test, e.g. 4.0 for a 4:1 split. Strata with fewer than two
    subjects go entirely to train with a warning.
    """
    if not manifest.samples:
        raise InvalidArgumentError("cannot split an empty manifest")
    if ratio <= 0:
        raise InvalidArgumentError(f"ratio must be positive, got {ratio}")
    train_frac = ratio / (ratio + 1.0)

    strata: dict[tuple[str, str], list[str]] = {}
    for sid in sorted(manifest.subjects):
        subj = manifest.subjects[sid]
        strata.setdefault((subj.age_group, subj.diagnosis), []).append(sid)

    rng = np.random.default_rng(seed)
    train_subjects: set[str] = set()
    test_subjects: set[str] = set()
    for key in sorted(strata):
        ids = strata[key]
        if len(ids) < 2:
            log.warning("stratum %s has %d subject(s); assigning all to train", key, len(ids))
            train_subjects.update(ids)
            continue
        perm = rng.permutation(len(ids))
        n_train = int(round(train_frac * len(ids)))
        n_train = min(max(n_train, 1), len(ids) - 1)
        for pos, idx in enumerate(perm):
            (train_subjects if pos < n_train else test_subjects).add(ids[idx])

    def restrict(subject_ids: set[str], split: str) -> DatasetManifest:
        return DatasetManifest(
            subjects={sid: manifest.subjects[sid] for sid in subject_ids},
            samples=[
                replace(s, split=split)
                for s in manifest.samples
                if s.subject_id in subject_ids
            ],
        )

    return restrict(train_subjects, TRAIN), restrict(test_subjects, TEST)


def oversample_young_pd(train: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Duplicate young-PD samples until the young PD/HC ratio matches the elderly one.

    Draws uniformly with replacement, seeded. Duplicates get fresh sample_ids
    but reference the same audio files. Other strata are untouched.
    """
    stats = manifest_stats(train)
    n_young_pd = stats.counts[(YOUNG, PD)]
    n_young_hc = stats.counts[(YOUNG, HC)]
    elderly_ratio = stats.ratios[ELDERLY]
    if n_young_pd == 0:
        raise InfeasibleResamplingError("no young PD samples to oversample")
    if elderly_ratio is None or n_young_hc == 0:
        raise InfeasibleResamplingError("elderly ratio or young HC count undefined")

    target = int(round(elderly_ratio * n_young_hc))
    if target <= n_young_pd:
        return train

    young_pd = [
        s
        for s in train.samples
        if train.subject_of(s).age_group == YOUNG and train.subject_of(s).diagnosis == PD
    ]
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(young_pd), size=target - n_young_pd)
    new_samples = list(train.samples)
    for k, i in enumerate(picks):
        src = young_pd[int(i)]
        new_samples.append(replace(src, sample_id=f"{src.sample_id}-dup{k}"))
    return DatasetManifest(subjects=dict(train.subjects), samples=new_samples)


@dataclass
class SynthConfig:
    """Parameters of the synthetic sustained-vowel corpus generator."""

    counts: dict[tuple[str, str], int]  # (age_group, diagnosis) -> #subjects
    sample_rate: int = 8000
    duration: float = 10.0
    base_f0: dict[str, float] = field(default_factory=lambda: {YOUNG: 140.0, ELDERLY: 110.0})
    severity_mean: dict[str, float] = field(default_factory=lambda: {YOUNG: 0.35, ELDERLY: 0.75})
    severity_sd: float = 0.10
    hc_severity_mean: float = 0.0  # baseline vocal roughness of healthy controls
    jitter_pct: float = 1.0  # max cycle-to-cycle F0 perturbation at severity 1
    shimmer_pct: float = 6.0  # max amplitude perturbation at severity 1
    tremor_hz_range: tuple[float, float] = (4.0, 7.0)
    interruption_rate: float = 0.5  # expected voicing breaks per second at severity 1
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise InvalidArgumentError("duration must be positive")
        lo, hi = self.tremor_hz_range
        if not (4.0 <= lo <= hi <= 7.0):
            raise InvalidArgumentError("tremor_hz_range must lie within [4, 7] Hz")
        for key, n in self.counts.items():
            if n < 0:
                raise InvalidArgumentError(f"negative count for {key}")
        if sum(self.counts.values()) == 0:
            raise InvalidArgumentError("total sample count is zero")


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    """Independent per-sample stream so parallel and serial generation agree."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _smooth_noise(rng: np.random.Generator, n: int, window: int) -> np.ndarray:
    """Zero-mean noise lowpassed by a moving average, unit peak scale."""
    raw = rng.standard_normal(n + window)
    kernel = np.ones(window) / window
    sm = np.convolve(raw, kernel, mode="same")[:n]
    peak = np.max(np.abs(sm))
    return sm / peak if peak > 0 else sm


def synth_vowel(
    rng: np.random.Generator,
    sample_rate: int,
    duration: float,
    f0: float,
    severity: float,
    tilt: float,
    jitter_pct: float,
    shimmer_pct: float,
    tremor_hz_range: tuple[float, float],
    interruption_rate: float,
) -> np.ndarray:
    """One sustained vowel as float samples in [-1, 1].

    `severity` in [0, 1] scales every dysphonia marker; `tilt` is the spectral
    rolloff exponent (higher tilt = darker voice, used as the age cue along
    with f0).
    """
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate

    # Jittered instantaneous pitch.
    jitter_frac = (0.15 + severity * jitter_pct) / 100.0
    cycle = max(int(sample_rate / f0), 8)
    f_inst = f0 * (1.0 + jitter_frac * _smooth_noise(rng, n, cycle))
    phase = 2.0 * np.pi * np.cumsum(f_inst) / sample_rate

    # Harmonic stack with /a/-like formants and a tilt rolloff.
    formants = [(700.0, 110.0), (1220.0, 120.0), (2600.0, 160.0)]
    nyq = sample_rate / 2.0
    k_max = max(int((0.95 * nyq) // f0), 1)
    sig = np.zeros(n)
    for k in range(1, k_max + 1):
        fk = k * f0
        env = sum(np.exp(-0.5 * ((fk - fc) / bw) ** 2) for fc, bw in formants)
        amp = (0.15 + env) * (f0 / fk) ** tilt
        sig += amp * np.sin(k * phase)

    # Shimmer (cycle-scale amplitude perturbation).
    shimmer_frac = (0.5 + severity * shimmer_pct) / 100.0
    sig *= 1.0 + shimmer_frac * _smooth_noise(rng, n, cycle)

    # 4-7 Hz amplitude tremor, depth grows with severity.
    lo, hi = tremor_hz_range
    f_tremor = rng.uniform(lo, hi)
    depth = 0.6 * severity
    sig *= 1.0 + depth * np.sin(2.0 * np.pi * f_tremor * t + rng.uniform(0, 2 * np.pi))

    # Random voicing interruptions with raised-cosine edges.
    n_breaks = rng.poisson(interruption_rate * duration * severity)
    gate = np.ones(n)
    for _ in range(n_breaks):
        width = rng.uniform(0.05, 0.30)
        start = rng.uniform(0.0, max(duration - width, 0.0))
        i0, i1 = int(start * sample_rate), int((start + width) * sample_rate)
        m = i1 - i0
        if m <= 0:
            continue
        win = 0.5 * (1.0 + np.cos(np.linspace(-np.pi, np.pi, m)))
        gate[i0:i1] *= 1.0 - 0.97 * win

    # Breathiness floor; the gate silences it too so breaks span all bands.
    sig += (0.01 + 0.05 * severity) * rng.standard_normal(n)
    sig *= gate

    peak = np.max(np.abs(sig))
    return sig * (0.9 / peak) if peak > 0 else sig


_GROUP_TAG = {YOUNG: "y", ELDERLY: "e"}
_AGE_RANGE = {YOUNG: (20, AGE_CUTOFF), ELDERLY: (AGE_CUTOFF + 1, 85)}


def generate_synthetic(config: SynthConfig, out_dir: str | os.PathLike) -> DatasetManifest:
    """Generate the synthetic corpus under `out_dir`; pure function of the config.

    One subject = one recording. Waveforms are 16-bit mono PCM at
    `config.sample_rate`; the returned manifest is also written to
    `out_dir/manifest.csv`.
    """
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise GenerationError(f"cannot create output directory {out_dir}: {e}") from e

    subjects: dict[str, SubjectRecord] = {}
    samples: list[SampleRecord] = []
    for group in AGE_GROUPS:
        for diag in DIAGNOSES:
            for i in range(config.counts.get((group, diag), 0)):
                tag = f"{_GROUP_TAG[group]}-{diag.lower()}-{i:04d}"
                sample_id = f"s-{tag}"
                rng = _sample_rng(config.seed, sample_id)

                lo, hi = _AGE_RANGE[group]
                age = int(rng.integers(lo, hi + 1))
                if diag == PD:
                    severity = float(
                        np.clip(
                            rng.normal(config.severity_mean[group], config.severity_sd),
                            0.05,
                            1.0,
                        )
                    )
                elif config.hc_severity_mean > 0.0:
                    severity = float(
                        np.clip(
                            rng.normal(config.hc_severity_mean, config.hc_severity_mean / 2),
                            0.0,
                            3.0 * config.hc_severity_mean,
                        )
                    )
                else:
                    severity = 0.0
                f0 = config.base_f0[group] * float(rng.uniform(0.94, 1.06))
                # Spectral tilt tracks age: older voices are darker.
                tilt = 0.8 + 1.4 * (age - 20) / 65.0 + float(rng.normal(0.0, 0.05))

                wav = synth_vowel(
                    rng,
                    config.sample_rate,
                    config.duration,
                    f0,
                    severity,
                    tilt,
                    config.jitter_pct,
                    config.shimmer_pct,
                    config.tremor_hz_range,
                    config.interruption_rate,
                )
                path = os.path.join(out_dir, f"{sample_id}.wav")
                pcm = np.clip(np.round(wav * 32767.0), -32768, 32767).astype(np.int16)
                try:
                    wavfile.write(path, config.sample_rate, pcm)
                except OSError as e:
                    raise GenerationError(f"failed writing {path}: {e}") from e

                subject_id = f"subj-{tag}"
                subjects[subject_id] = SubjectRecord(subject_id, age, diag)
                samples.append(SampleRecord(sample_id, subject_id, path))

    manifest = DatasetManifest(subjects=subjects, samples=samples)
    manifest.save_csv(os.path.join(out_dir, "manifest.csv"))
    return manifest


def load_waveform(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a mono PCM wave file as float samples in [-1, 1] plus its rate."""
    rate, data = wavfile.read(os.fspath(path))
    if data.ndim != 1:
        raise InvalidArgumentError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32767.0, rate
    if data.dtype == np.float32 or data.dtype == np.float64:
        return data.astype(np.float64), rate
    raise InvalidArgumentError(f"{path}: unsupported sample dtype {data.dtype}")
