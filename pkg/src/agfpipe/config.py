"""Pipeline configuration: profiles, flat key=value config files, overrides.

Precedence: profile defaults < config file < explicit CLI overrides. The
"paper" profile locks the published training constants (2048-code
dictionaries, 40 artist groups, 200/1000/50 epochs, batch 64, lr 0.001,
full-width networks); attempts to override a locked key are rejected so a
paper-profile run is always the canonical configuration.
"""

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class PipelineConfig:
    profile: str = "desk"
    data_dir: str = "data"
    seed: int = 0
    n_genres: int = 4
    k_codebook: int = 64
    n_topics: int = 5
    lda_alpha: float = -1.0  # -1 means 50 / n_topics
    lda_beta: float = 0.01
    lda_iters: int = 100
    width_scale: float = 0.25
    mlp_hidden: int = 128
    batch_size: int = 64
    lr: float = 0.001
    epochs_stn: int = 40
    epochs_mtn: int = 80
    epochs_mlp: int = 25
    task_schedule: str = "uniform"
    split_ratio: float = 0.85
    duration_s: float = 4.0

    def resolved_alpha(self) -> float:
        return 50.0 / self.n_topics if self.lda_alpha < 0 else self.lda_alpha

    def as_text(self) -> str:
        pairs = [f"{f.name}={getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(pairs) + "\n"

    def as_line(self) -> str:
        return " ".join(f"{f.name}={getattr(self, f.name)}"
                        for f in dataclasses.fields(self))


PROFILES = {
    "desk": {},  # the dataclass defaults are the desk profile
    "paper": {
        "n_genres": 16,
        "k_codebook": 2048,
        "n_topics": 40,
        "lda_iters": 500,
        "width_scale": 1.0,
        "mlp_hidden": 1024,
        "batch_size": 64,
        "lr": 0.001,
        "epochs_stn": 200,
        "epochs_mtn": 1000,
        "epochs_mlp": 50,
    },
}

PAPER_LOCKED = ("k_codebook", "n_topics", "epochs_stn", "epochs_mtn",
                "epochs_mlp", "batch_size", "lr", "width_scale", "mlp_hidden")

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    t = _FIELD_TYPES[key]
    try:
        if t == "int" or t is int:
            return int(value)
        if t == "float" or t is float:
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for config key {key!r}")


def load_config_file(path) -> dict:
    """Parse a flat key=value file ('#' starts a comment)."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = _coerce(key, value)
    return out


def resolve_config(profile: str = "desk", file_values: dict = None,
                   overrides: dict = None) -> PipelineConfig:
    """Merge profile defaults, config-file values, and CLI overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values = {"profile": profile}
    values.update(PROFILES[profile])
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            if key == "profile":
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            if profile == "paper" and key in PAPER_LOCKED and val != PROFILES["paper"][key]:
                raise ConfigError(
                    f"config key {key!r} is locked to {PROFILES['paper'][key]} "
                    "under the paper profile")
            values[key] = val
    return PipelineConfig(**values)
