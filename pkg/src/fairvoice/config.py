"""Run configuration: a commented TOML file plus the FAIRVOICE_SEED override.

Top-level keys: `seed`, `output_dir`, `backbone`; sections: `[synth]`,
`[train]`, `[mel]`, `[mask]`, `[adversarial]`, `[ensemble]`, `[policy]`,
`[data]` (train/test manifest paths for pre-existing corpora).
"""

from __future__ import annotations

import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .corpus import ELDERLY, HC, PD, YOUNG, SynthConfig
from .debias import AdversarialConfig, MaskConfig
from .errors import ConfigError
from .nets import BackboneKind, TrainConfig
from .screen import PolicyTargets
from .spectro import MelParams

SEED_ENV_VAR = "FAIRVOICE_SEED"

_BACKBONES = {k.value: k for k in BackboneKind}


@dataclass
class RunConfig:
    seed: int
    output_dir: str
    backbone: BackboneKind
    synth: SynthConfig | None
    train: TrainConfig
    mel: MelParams
    mask: MaskConfig
    adversarial: AdversarialConfig
    ensemble_size: int
    policy: PolicyTargets
    train_manifest: str | None = None
    test_manifest: str | None = None
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode()
        ).hexdigest()[:16]


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing config key {where}{key!r}")
    return table[key]


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e

    seed = int(_require(raw, "seed", ""))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None

    output_dir = str(_require(raw, "output_dir", ""))
    backbone_name = str(_require(raw, "backbone", ""))
    if backbone_name not in _BACKBONES:
        raise ConfigError(
            f"unknown backbone {backbone_name!r}; expected one of {sorted(_BACKBONES)}"
        )

    synth = None
    if "synth" in raw:
        s = raw["synth"]
        counts = {
            (YOUNG, PD): int(_require(s, "young_pd", "synth.")),
            (YOUNG, HC): int(_require(s, "young_hc", "synth.")),
            (ELDERLY, PD): int(_require(s, "elderly_pd", "synth.")),
            (ELDERLY, HC): int(_require(s, "elderly_hc", "synth.")),
        }
        kwargs = {}
        for key in ("sample_rate", "duration", "jitter_pct", "shimmer_pct",
                    "interruption_rate"):
            if key in s:
                kwargs[key] = s[key]
        if "tremor_hz_range" in s:
            kwargs["tremor_hz_range"] = tuple(s["tremor_hz_range"])
        if "base_f0_young" in s or "base_f0_elderly" in s:
            kwargs["base_f0"] = {
                YOUNG: float(s.get("base_f0_young", 140.0)),
                ELDERLY: float(s.get("base_f0_elderly", 110.0)),
            }
        if "severity_mean_young" in s or "severity_mean_elderly" in s:
            kwargs["severity_mean"] = {
                YOUNG: float(s.get("severity_mean_young", 0.35)),
                ELDERLY: float(s.get("severity_mean_elderly", 0.75)),
            }
        try:
            synth = SynthConfig(counts=counts, seed=seed, **kwargs)
        except Exception as e:
            raise ConfigError(f"invalid [synth] section: {e}") from e

    t = raw.get("train", {})
    try:
        train = TrainConfig(
            epochs=int(t.get("epochs", 24)),
            learning_rate=float(t.get("learning_rate", 1e-5)),
            batch_size=int(t.get("batch_size", 32)),
            seed=seed,
            pretrained=bool(t.get("pretrained", False)),
        )
        m = raw.get("mel", {})
        mel = MelParams(
            fft_window=int(m.get("fft_window", 2048)),
            overlap=float(m.get("overlap", 0.75)),
            mel_bins=int(m.get("mel_bins", 128)),
        )
        mask = MaskConfig(threshold=float(raw.get("mask", {}).get("threshold", 0.6)))
        adversarial = AdversarialConfig(
            weight=float(raw.get("adversarial", {}).get("weight", 0.01))
        )
        p = raw.get("policy", {})
        policy = PolicyTargets(
            precision_target=float(p.get("precision_target", 0.95)),
            recall_target=float(p.get("recall_target", 0.90)),
        )
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(f"{path}: {e}") from e

    data = raw.get("data", {})
    return RunConfig(
        seed=seed,
        output_dir=output_dir,
        backbone=_BACKBONES[backbone_name],
        synth=synth,
        train=train,
        mel=mel,
        mask=mask,
        adversarial=adversarial,
        ensemble_size=int(raw.get("ensemble", {}).get("size", 5)),
        policy=policy,
        train_manifest=data.get("train_manifest"),
        test_manifest=data.get("test_manifest"),
        raw=raw,
    )
