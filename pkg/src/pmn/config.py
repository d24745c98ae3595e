"""Configuration management for the PMN toolkit."""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError

load_dotenv()


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Process-level settings read from the environment (or a .env file)."""

    LOG_LEVEL: str = os.getenv("PMN_LOG_LEVEL", "INFO")
    LOG_FILE: str = os.getenv("PMN_LOG_FILE", "pmn.log")

    # Evaluation worker threads
    THREADS: str = os.getenv("PMN_THREADS", "1")

    # f32 for training, f64 for gradient checks
    PRECISION: str = os.getenv("PMN_PRECISION", "f32")

    # One-hot encoding cache
    ENABLE_ENCODING_CACHE: bool = _env_flag("PMN_ENABLE_ENCODING_CACHE", "true")
    ENCODING_CACHE_SIZE: str = os.getenv("PMN_ENCODING_CACHE_SIZE", "50000")

    @classmethod
    def validate(cls) -> bool:
        """Validate environment-provided settings."""
        if cls.PRECISION not in ("f32", "f64"):
            raise ConfigError(f"PMN_PRECISION must be 'f32' or 'f64', got '{cls.PRECISION}'")
        for name in ("THREADS", "ENCODING_CACHE_SIZE"):
            value = getattr(cls, name)
            if not value.isdigit() or int(value) < 1:
                raise ConfigError(f"PMN_{name} must be a positive integer, got '{value}'")
        return True

    @classmethod
    def threads(cls) -> int:
        return int(cls.THREADS)

    @classmethod
    def encoding_cache_size(cls) -> int:
        return int(cls.ENCODING_CACHE_SIZE)


# ---------------------------------------------------------------------------
# Key-value configuration files
# ---------------------------------------------------------------------------

Entry = Tuple[str, str, str]  # key, raw value, location


def parse_key_value_text(text: str, source: str = "<text>") -> List[Entry]:
    """
    Parse ``key = value`` lines.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Entries in file order as (key, value, "source:line")
    """
    entries: List[Entry] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: missing key")
        entries.append((key, value, f"{source}:{number}"))
    return entries


def parse_key_value_file(path: Union[str, Path]) -> List[Entry]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    return parse_key_value_text(text, str(path))


def parse_overrides(overrides: Iterable[str]) -> List[Entry]:
    """Turn ``--set key=value`` arguments into entries."""
    entries: List[Entry] = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        entries.append((key, value, f"--set {item}"))
    return entries


def collect_settings(entries: Sequence[Entry], list_keys: Iterable[str] = ()) -> Dict[str, Any]:
    """
    Fold entries into a dict; later scalar entries override earlier ones.

    Keys listed in ``list_keys`` accumulate every occurrence into a list.
    """
    list_keys = set(list_keys)
    settings: Dict[str, Any] = {}
    for key, value, _ in entries:
        if key in list_keys:
            settings.setdefault(key, []).append(value)
        else:
            settings[key] = value
    return settings


def split_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


COMMA_LIST_KEYS = ("conv_channels", "conv_widths", "variants", "attention_modes")


def format_settings(settings: Dict[str, Any]) -> str:
    """Render settings back into key-value text (used for provenance echoes)."""
    lines = []
    for key in sorted(settings):
        value = settings[key]
        if isinstance(value, (list, tuple)):
            if key in COMMA_LIST_KEYS:
                lines.append(f"{key} = {','.join(str(v) for v in value)}")
            else:
                lines.extend(f"{key} = {item}" for item in value)
        elif value is None:
            lines.append(f"{key} =")
        elif isinstance(value, bool):
            lines.append(f"{key} = {'true' if value else 'false'}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Run configuration (training / evaluation commands)
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    """Flat, file-backed configuration merged with command-line overrides.

    Every field has a default so an empty file is a valid configuration.
    """

    model_config = ConfigDict(extra="forbid")

    variant: str = "pmn"
    attention_mode: str = "sigmoid"
    embedding_dim: int = 128
    hops: int = 5
    epsilon: float = 20.0
    prototype_weight: float = 1.0
    conv_channels: Tuple[int, ...] = (512, 256, 128)
    conv_widths: Tuple[int, ...] = (9, 5, 3)
    dropout: float = 0.2
    match_updated_state: bool = False
    batch_size: int = Field(default=512, ge=1)
    epochs: int = Field(default=40, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    seed: int = 0
    grad_clip: Optional[float] = None
    record_timing: bool = False
    precision: str = "f32"
    threads: int = Field(default=1, ge=1)

    @classmethod
    def from_sources(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Iterable[str] = (),
        defaults: Optional[Dict[str, Any]] = None,
    ) -> "RunConfig":
        """
        Merge ``defaults`` < config file < ``--set`` overrides.

        Raises:
            ConfigError: On parse errors, unknown keys or invalid values
        """
        entries: List[Entry] = []
        if path is not None:
            entries.extend(parse_key_value_file(path))
        entries.extend(parse_overrides(overrides))
        settings = {**(defaults or {}), **collect_settings(entries)}
        for key in ("conv_channels", "conv_widths"):
            if key in settings:
                settings[key] = split_list(settings[key])
        if settings.get("grad_clip") in ("", "none", "None"):
            settings["grad_clip"] = None
        try:
            return cls.model_validate(settings)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration: {e}")

    def with_overrides(self, **values: Any) -> "RunConfig":
        try:
            return self.model_validate({**self.model_dump(), **values})
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration: {e}")

    def model_settings(self, num_labels: int, seq_length: int):
        """Build the PMNConfig this run describes for a dataset shape."""
        from .model import PMNConfig

        try:
            return PMNConfig(
                num_labels=num_labels,
                seq_length=seq_length,
                embedding_dim=self.embedding_dim,
                hops=self.hops,
                epsilon=self.epsilon,
                prototype_weight=self.prototype_weight,
                attention_mode=self.attention_mode,
                variant=self.variant,
                conv_channels=self.conv_channels,
                conv_widths=self.conv_widths,
                dropout=self.dropout,
                match_updated_state=self.match_updated_state,
                precision=self.precision,
            )
        except ValidationError as e:
            raise ConfigError(f"invalid model configuration: {e}")

    def train_settings(self, num_labels: int, seq_length: int, checkpoint_dir: Union[str, Path]):
        """Build the TrainConfig this run describes."""
        from .trainer import TrainConfig

        try:
            return TrainConfig(
                model=self.model_settings(num_labels, seq_length),
                batch_size=self.batch_size,
                epochs=self.epochs,
                learning_rate=self.learning_rate,
                seed=self.seed,
                grad_clip=self.grad_clip,
                checkpoint_dir=str(checkpoint_dir),
                record_timing=self.record_timing,
                threads=self.threads,
            )
        except ValidationError as e:
            raise ConfigError(f"invalid training configuration: {e}")

    def echo(self) -> str:
        return format_settings(self.model_dump())
