"""Run configuration: INI file + command-line overrides -> typed configs.

Sections and keys are schema-checked; unknown names are configuration
errors. Every CLI run writes its fully-resolved configuration (canonical
ordering) next to its outputs, and the run-directory name embeds the
hash of that text, so identical configs map to identical provenance.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import LossWeights, ModelConfig
from .synth import GroupTimingSpec, SynthSpec
from .trainer import TrainConfig, finetune_defaults, pretrain_defaults

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


SCHEMA: dict[str, dict[str, type]] = {
    "model": {
        "d_model": int,
        "n_layers": int,
        "n_heads": int,
        "d_ff": int,
        "max_seq_len": int,
        "dropout_rate": float,
        "disable_duration": bool,
        "disable_pause": bool,
    },
    "vocab": {"min_count": int},
    "pretrain": {
        "learning_rate": float,
        "batch_size": int,
        "epochs": int,
        "word_mask_rate": float,
        "pause_mask_rate": float,
        "mlm_weight": float,
        "pause_weight": float,
        "seed": int,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "grad_clip_norm": float,
        "freeze_non_temporal": bool,
        "checkpoint_every": int,
    },
    "finetune": {
        "learning_rate": float,
        "batch_size": int,
        "iterations": int,
        "seed": int,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "grad_clip_norm": float,
        "freeze_non_temporal": bool,
    },
    "synth": {
        "n_per_group": int,
        "words_min": int,
        "words_max": int,
        "seed": int,
        "text_mode": str,
        "mu_duration_control": float,
        "sigma_duration_control": float,
        "mu_pause_control": float,
        "sigma_pause_control": float,
        "mu_duration_ad": float,
        "sigma_duration_ad": float,
        "mu_pause_ad": float,
        "sigma_pause_ad": float,
    },
    "eval": {"sweep_masking": bool},
}

DEFAULTS: dict[str, dict[str, object]] = {
    "model": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "d_ff": 128,
        "max_seq_len": 64,
        "dropout_rate": 0.1,
        "disable_duration": False,
        "disable_pause": False,
    },
    "vocab": {"min_count": 1},
    "pretrain": {
        "learning_rate": 1e-5,
        "batch_size": 8,
        "epochs": 10,
        "word_mask_rate": 0.15,
        "pause_mask_rate": 0.15,
        "mlm_weight": 1.0,
        "pause_weight": 1.0,
        "seed": 1,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "grad_clip_norm": 1.0,
        "freeze_non_temporal": False,
        "checkpoint_every": 0,
    },
    "finetune": {
        "learning_rate": 2e-5,
        "batch_size": 4,
        "iterations": 200,
        "seed": 2,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "grad_clip_norm": 1.0,
        "freeze_non_temporal": False,
    },
    "synth": {
        "n_per_group": 100,
        "words_min": 30,
        "words_max": 50,
        "seed": 7,
        "text_mode": "shared",
        "mu_duration_control": math.log(0.25),
        "sigma_duration_control": 0.3,
        "mu_pause_control": math.log(0.15),
        "sigma_pause_control": 0.4,
        "mu_duration_ad": math.log(0.25),
        "sigma_duration_ad": 0.3,
        "mu_pause_ad": math.log(0.45),
        "sigma_pause_ad": 0.4,
    },
    "eval": {"sweep_masking": True},
}


def _coerce(section: str, key: str, raw: object) -> object:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    target = SCHEMA[section][key]
    if isinstance(raw, str):
        try:
            if target is bool:
                return _parse_bool(raw)
            return target(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    return raw


@dataclass
class RunConfig:
    sections: dict[str, dict[str, object]] = field(
        default_factory=lambda: {s: dict(kv) for s, kv in DEFAULTS.items()}
    )
    explicit: set[tuple[str, str]] = field(default_factory=set)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser()
            read = parser.read(Path(path))
            if not read:
                raise ConfigError(f"config file not found: {path}")
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.sections.setdefault(section, {})
                    cfg.sections[section][key] = _coerce(section, key, raw)
                    cfg.explicit.add((section, key))
        for item in overrides or []:
            cfg.apply_override(item)
        return cfg

    def apply_override(self, item: str) -> None:
        """Apply one --set argument of the form section.key=value."""
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        section, key = section.strip(), key.strip()
        self.sections[section][key] = _coerce(section, key, value.strip())
        self.explicit.add((section, key))

    def is_explicit(self, section: str, key: str) -> bool:
        return (section, key) in self.explicit

    def get(self, section: str, key: str):
        try:
            return self.sections[section][key]
        except KeyError as exc:
            raise ConfigError(f"missing config value {section}.{key}") from exc

    def to_ini_text(self) -> str:
        lines = []
        for section in sorted(self.sections):
            lines.append(f"[{section}]")
            for key in sorted(self.sections[section]):
                lines.append(f"{key} = {self.sections[section][key]}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini_text().encode("utf-8")).hexdigest()[:8]

    def write_resolved(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini_text(), encoding="utf-8")

    # typed builders -------------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        m = self.sections["model"]
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=m["d_model"],
            n_layers=m["n_layers"],
            n_heads=m["n_heads"],
            d_ff=m["d_ff"],
            max_seq_len=m["max_seq_len"],
            dropout_rate=m["dropout_rate"],
            disable_duration=m["disable_duration"],
            disable_pause=m["disable_pause"],
        )

    def model_overrides(self) -> dict:
        """Explicitly-set switches that may be applied onto a checkpoint config.

        Only non-structural keys qualify (ablation flags, dropout);
        structural keys must match the checkpoint and are validated by
        the CLI instead.
        """
        m = self.sections["model"]
        return {
            key: m[key]
            for key in ("dropout_rate", "disable_duration", "disable_pause")
            if self.is_explicit("model", key)
        }

    def check_structural_match(self, ckpt_cfg: ModelConfig) -> None:
        """Explicit structural [model] keys must agree with a loaded checkpoint."""
        for key in ("d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if self.is_explicit("model", key) and self.sections["model"][key] != getattr(
                ckpt_cfg, key
            ):
                raise ConfigError(
                    f"model.{key}={self.sections['model'][key]} conflicts with the "
                    f"checkpoint value {getattr(ckpt_cfg, key)}"
                )

    def pretrain_config(self) -> TrainConfig:
        p = self.sections["pretrain"]
        return pretrain_defaults(
            learning_rate=p["learning_rate"],
            batch_size=p["batch_size"],
            epochs=p["epochs"],
            word_mask_rate=p["word_mask_rate"],
            pause_mask_rate=p["pause_mask_rate"],
            loss_weights=LossWeights(mlm=p["mlm_weight"], pause=p["pause_weight"], cls=0.0),
            seed=p["seed"],
            adam_beta1=p["adam_beta1"],
            adam_beta2=p["adam_beta2"],
            adam_eps=p["adam_eps"],
            grad_clip_norm=p["grad_clip_norm"],
            freeze_non_temporal=p["freeze_non_temporal"],
            checkpoint_every=p["checkpoint_every"],
        )

    def finetune_config(self) -> TrainConfig:
        f = self.sections["finetune"]
        return finetune_defaults(
            learning_rate=f["learning_rate"],
            batch_size=f["batch_size"],
            iterations=f["iterations"],
            seed=f["seed"],
            adam_beta1=f["adam_beta1"],
            adam_beta2=f["adam_beta2"],
            adam_eps=f["adam_eps"],
            grad_clip_norm=f["grad_clip_norm"],
            freeze_non_temporal=f["freeze_non_temporal"],
        )

    def synth_spec(self) -> SynthSpec:
        s = self.sections["synth"]
        return SynthSpec(
            n_per_group=s["n_per_group"],
            words_min=s["words_min"],
            words_max=s["words_max"],
            seed=s["seed"],
            text_mode=s["text_mode"],
            control=GroupTimingSpec(
                mu_duration=s["mu_duration_control"],
                sigma_duration=s["sigma_duration_control"],
                mu_pause=s["mu_pause_control"],
                sigma_pause=s["sigma_pause_control"],
            ),
            ad=GroupTimingSpec(
                mu_duration=s["mu_duration_ad"],
                sigma_duration=s["sigma_duration_ad"],
                mu_pause=s["mu_pause_ad"],
                sigma_pause=s["sigma_pause_ad"],
            ),
        )
