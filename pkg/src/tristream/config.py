"""Line-based ``key = value`` run configuration.

One flat namespace covers the architecture, objective, run, and synthetic
generator settings; command-line flags override file values; unknown keys
are rejected with their line number. Every command writes its fully
resolved configuration into the run directory so a run is replayable from
that file alone.
"""

from pathlib import Path

from .errors import ConfigError
from .losses import ObjectiveConfig
from .network import ARCH_PRESETS, ArchConfig
from .synth import SynthConfig
from .train import RunConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_channels(text: str):
    return tuple(int(c.strip()) for c in text.split(","))


def _parse_optional_float(text: str):
    return None if text.strip().lower() == "none" else float(text)


def _parse_anneal(text: str):
    return None if text.strip().lower() == "auto" else int(text)


def _parse_grid(text: str):
    return tuple(float(v.strip()) for v in text.split(","))


# key -> (parser, default-source note used in docs)
KNOWN_KEYS = {
    "arch.preset": str,
    "arch.image_h": int,
    "arch.image_w": int,
    "arch.image_c": int,
    "arch.signal_len": int,
    "arch.channels": _parse_channels,
    "arch.latent_dim": int,
    "arch.head_hidden": int,
    "arch.head_dropout": float,
    "obj.lambda_cxr": float,
    "obj.lambda_ecg": float,
    "obj.anneal_steps": _parse_anneal,
    "obj.max_beta": float,
    "obj.grid": _parse_grid,
    "run.seed": int,
    "run.batch_size": int,
    "run.epochs": int,
    "run.stream_mode": str,
    "run.modality": str,
    "run.lr": float,
    "run.val_fraction": float,
    "run.folds": int,
    "run.grid_epochs": int,
    "synth.n": int,
    "synth.shared_dim": int,
    "synth.image_noise": float,
    "synth.signal_noise": float,
    "synth.label_threshold": float,
    "synth.class_balance": _parse_optional_float,
    "synth.seed": int,
}


def parse_config_file(path) -> dict:
    """Parse and type-check a config file; raises with line numbers."""
    text = Path(path).read_text(encoding="utf-8")
    values = {}
    bad_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            bad_lines.append(f"line {lineno}: missing '=' in {raw!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in KNOWN_KEYS:
            bad_lines.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = KNOWN_KEYS[key](val)
        except ValueError as exc:
            bad_lines.append(f"line {lineno}: bad value for {key}: {exc}")
    if bad_lines:
        raise ConfigError(f"{path}: " + "; ".join(bad_lines))
    return values


class Resolved:
    """Merged config-file values plus command-line overrides."""

    def __init__(self, file_values: dict | None = None):
        self.values = dict(file_values or {})

    def override(self, key: str, value) -> None:
        if value is None:
            return
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    def get(self, key, default=None):
        return self.values.get(key, default)

    def arch(self) -> ArchConfig:
        preset_name = self.values.get("arch.preset", "desk")
        if preset_name not in ARCH_PRESETS:
            raise ConfigError(f"unknown arch.preset {preset_name!r}; "
                              f"choose from {sorted(ARCH_PRESETS)}")
        preset = ARCH_PRESETS[preset_name]
        kwargs = {}
        for field in ("image_h", "image_w", "image_c", "signal_len", "channels",
                      "latent_dim", "head_hidden", "head_dropout"):
            key = f"arch.{field}"
            kwargs[field] = self.values.get(key, getattr(preset, field))
        return ArchConfig(**kwargs)

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            lambda_cxr=self.values.get("obj.lambda_cxr", 1.0),
            lambda_ecg=self.values.get("obj.lambda_ecg", 1.0),
            anneal_steps=self.values.get("obj.anneal_steps", None),
            max_beta=self.values.get("obj.max_beta", 1.0),
        )

    def run(self, **defaults) -> RunConfig:
        merged = dict(batch_size=128, epochs=100, seed=0, stream_mode="tri",
                      modality="joint", lr=0.001, val_fraction=0.1)
        merged.update(defaults)
        for field in ("seed", "batch_size", "epochs", "stream_mode", "modality",
                      "lr", "val_fraction"):
            key = f"run.{field}"
            if key in self.values:
                merged[field] = self.values[key]
        return RunConfig(**merged)

    def synth(self, arch: ArchConfig) -> SynthConfig:
        return SynthConfig(
            n=self.values.get("synth.n", 200),
            shared_dim=self.values.get("synth.shared_dim", 2),
            image_h=arch.image_h,
            image_w=arch.image_w,
            signal_len=arch.signal_len,
            image_noise=self.values.get("synth.image_noise", 0.05),
            signal_noise=self.values.get("synth.signal_noise", 0.05),
            label_threshold=self.values.get("synth.label_threshold", 0.0),
            class_balance=self.values.get("synth.class_balance", None),
            seed=self.values.get("synth.seed", 0),
        )

    def dump(self, arch: ArchConfig | None = None) -> str:
        """Full resolved key set as config-file text."""
        values = dict(self.values)
        if arch is not None:
            values.setdefault("arch.preset", "desk")
            for field in ("image_h", "image_w", "image_c", "signal_len",
                          "latent_dim", "head_hidden", "head_dropout"):
                values[f"arch.{field}"] = getattr(arch, field)
            values["arch.channels"] = arch.channels
        lines = []
        for key in sorted(values):
            val = values[key]
            if isinstance(val, tuple):
                text = ",".join(str(v) for v in val)
            elif val is None:
                text = "auto" if key == "obj.anneal_steps" else "none"
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"
