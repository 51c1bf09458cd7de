"""
Run configuration, sweep specification and dataset manifests.
"""

import json
import os
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, ManifestError
from .models import ConcatConfig, DecodeStrategy, ManifestRecord, ManifestTask, VisualPromptConfig


class PromptPolicy(str, Enum):
    """How the decoder prompt of each record is built."""
    DEFAULT = "default"          # single language; LID over the record's pair for cs_asr
    FIXED = "fixed"              # one configured language
    VISUAL = "visual"            # retrieved object labels as previous text
    CONCAT = "concat"            # two language tokens unless LID is confident
    ST = "st"                    # <|sot|><|target|><|asr|>
    ST_DEFAULT = "st_default"    # <|sot|><|target|><|st|>


POLICY_TASKS: Dict[PromptPolicy, tuple] = {
    PromptPolicy.DEFAULT: (ManifestTask.ASR, ManifestTask.CS_ASR),
    PromptPolicy.FIXED: (ManifestTask.ASR, ManifestTask.CS_ASR),
    PromptPolicy.VISUAL: (ManifestTask.ASR,),
    PromptPolicy.CONCAT: (ManifestTask.CS_ASR,),
    PromptPolicy.ST: (ManifestTask.ST,),
    PromptPolicy.ST_DEFAULT: (ManifestTask.ST,),
}


class MaskSpec(BaseModel):
    """Decode-time vocabulary restriction; set parts are intersected."""
    script: Optional[str] = None            # named script, or "auto" to follow the record's target
    script_file: Optional[str] = None       # script specs file the name is looked up in
    frequency_corpus: Optional[str] = None
    frequency_percent: Optional[float] = Field(default=None, gt=0.0, le=100.0)
    mask_file: Optional[str] = None

    @model_validator(mode="after")
    def _check_frequency(self) -> "MaskSpec":
        if self.frequency_percent is not None and self.frequency_corpus is None:
            raise ValueError("frequency_percent needs a frequency_corpus")
        return self

    @property
    def is_empty(self) -> bool:
        return not (self.script or self.frequency_corpus or self.mask_file)


class RetrievalSettings(BaseModel):
    """Where visual prompts get their object labels."""
    index: Optional[str] = None
    aggregation: str = "max"
    frame_count: int = Field(default=3, ge=1)
    embedder: Optional[str] = None      # file:<vectors.emb> | exec:<cmd> | tcp:<host>:<port>, for image frames

    @field_validator("aggregation")
    @classmethod
    def _check_aggregation(cls, value: str) -> str:
        if value not in ("max", "mean"):
            raise ValueError("aggregation must be 'max' or 'mean'")
        return value


class DecodeSettings(BaseModel):
    max_new_tokens: int = Field(default=224, ge=0)
    strategy: DecodeStrategy = DecodeStrategy.GREEDY
    beam_width: int = Field(default=1, ge=1)


class RunConfig(BaseModel):
    """Everything that determines the output of an evaluation run."""
    backend: str
    vocab: Optional[str] = None
    policy: PromptPolicy = PromptPolicy.DEFAULT
    language: Optional[str] = None
    concat: ConcatConfig = Field(default_factory=ConcatConfig)
    visual: VisualPromptConfig = Field(default_factory=VisualPromptConfig)
    retrieval: RetrievalSettings = Field(default_factory=RetrievalSettings)
    mask: MaskSpec = Field(default_factory=MaskSpec)
    decode: DecodeSettings = Field(default_factory=DecodeSettings)
    workers: int = Field(default=1, ge=1, le=64)
    output_dir: str = "runs/latest"
    cache_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_policy(self) -> "RunConfig":
        if self.policy == PromptPolicy.FIXED and not self.language:
            raise ValueError("policy 'fixed' needs a language")
        if self.policy == PromptPolicy.VISUAL and not self.retrieval.index:
            raise ValueError("policy 'visual' needs retrieval.index")
        return self

    def check_task(self, task: ManifestTask) -> None:
        """Raise ConfigError when the policy cannot serve records of `task`."""
        if task not in POLICY_TASKS[self.policy]:
            allowed = ", ".join(t.value for t in POLICY_TASKS[self.policy])
            raise ConfigError(f"policy '{self.policy.value}' does not fit task '{task.value}' (expects {allowed})")


class SweepParameter(str, Enum):
    TOP_K = "top_k"
    LID_THRESHOLD = "lid_threshold"
    FREQUENCY_PERCENT = "frequency_percent"


class SweepSpec(BaseModel):
    """One parameter and the values to try."""
    parameter: SweepParameter
    values: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_values(self) -> "SweepSpec":
        for value in self.values:
            if self.parameter == SweepParameter.TOP_K and (value < 1 or value != int(value)):
                raise ValueError(f"top_k values must be positive integers, got {value}")
            if self.parameter == SweepParameter.LID_THRESHOLD and not 0.0 <= value <= 1.0:
                raise ValueError(f"lid_threshold values must be in [0, 1], got {value}")
            if self.parameter == SweepParameter.FREQUENCY_PERCENT and not 0.0 < value <= 100.0:
                raise ValueError(f"frequency_percent values must be in (0, 100], got {value}")
        if len(set(self.values)) != len(self.values):
            raise ValueError("sweep values must be distinct")
        return self

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """`top_k=30,50,90` style shorthand used by the CLI."""
        name, sep, values = text.partition("=")
        if not sep:
            raise ConfigError(f"sweep {text!r} must look like name=v1,v2,...")
        try:
            return cls(parameter=name.strip(), values=[float(v) for v in values.split(",") if v.strip()])
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"invalid sweep {text!r}: {e}") from e

    def apply(self, cfg: RunConfig, value: float) -> RunConfig:
        """Copy of `cfg` with the swept parameter set to `value`."""
        if self.parameter == SweepParameter.TOP_K:
            return cfg.model_copy(update={"visual": cfg.visual.model_copy(update={"top_k": int(value)})})
        if self.parameter == SweepParameter.LID_THRESHOLD:
            return cfg.model_copy(update={"concat": cfg.concat.model_copy(update={"lid_threshold": float(value)})})
        if cfg.mask.frequency_corpus is None:
            raise ConfigError("sweeping frequency_percent needs mask.frequency_corpus")
        return cfg.model_copy(update={"mask": cfg.mask.model_copy(update={"frequency_percent": float(value)})})


class RunConfigManager:
    """Loads run configs from YAML with paths resolved against the file's directory."""

    PATH_FIELDS = ("vocab", "output_dir", "cache_dir")

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.config_file = Path(config_file) if config_file else None
        self.config: Optional[RunConfig] = self._load_config() if self.config_file else None

    def _load_config(self) -> RunConfig:
        path = self.config_file
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot load run config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: run config must be a mapping")
        return self.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> RunConfig:
        try:
            cfg = RunConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"invalid run config: {e}") from e
        return cls.resolve_paths(cfg, base_dir) if base_dir is not None else cfg

    @classmethod
    def resolve_paths(cls, cfg: RunConfig, base_dir: Path) -> RunConfig:
        def resolve(value: Optional[str]) -> Optional[str]:
            if value is None or os.path.isabs(value):
                return value
            return str((base_dir / value).resolve())

        update = {name: resolve(getattr(cfg, name)) for name in cls.PATH_FIELDS}
        if cfg.backend.startswith("mock:"):
            update["backend"] = "mock:" + resolve(cfg.backend[len("mock:"):])
        update["mask"] = cfg.mask.model_copy(update={
            "script_file": resolve(cfg.mask.script_file),
            "frequency_corpus": resolve(cfg.mask.frequency_corpus),
            "mask_file": resolve(cfg.mask.mask_file),
        })
        retrieval = {"index": resolve(cfg.retrieval.index)}
        if cfg.retrieval.embedder and cfg.retrieval.embedder.startswith("file:"):
            retrieval["embedder"] = "file:" + resolve(cfg.retrieval.embedder[len("file:"):])
        update["retrieval"] = cfg.retrieval.model_copy(update=retrieval)
        return cfg.model_copy(update=update)

    def update_config(self, **kwargs) -> RunConfig:
        """Override fields (CLI flags); the result is re-validated."""
        current = self.config.model_dump() if self.config else {}
        current.update({key: value for key, value in kwargs.items() if value is not None})
        self.config = self.from_dict(current)
        return self.config

    def save_config(self, path: Union[str, Path]) -> Path:
        if self.config is None:
            raise ConfigError("no run config loaded")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.config.model_dump(mode="json"), sort_keys=True, allow_unicode=True),
                        encoding="utf-8")
        return path


def create_run_config_template() -> str:
    """A commented starting point for a run config."""
    return """\
# Whisper Prompt Toolkit run config
backend: mock:mock_script.yaml      # mock:<script> | exec:<command> | tcp:<host>:<port>
vocab: ../vocab/toy_vocab.txt
policy: concat                      # default | fixed | visual | concat | st | st_default
concat:
  languages: [zh, en]
  lid_threshold: 1.0                # 1.0 always concatenates
visual:
  top_k: 50
retrieval:
  index: null
  aggregation: max
mask:
  script: null                      # cjk | cyrillic | arabic | auto
  frequency_corpus: null
  frequency_percent: null
decode:
  max_new_tokens: 224
  strategy: greedy
  beam_width: 1
workers: 4
output_dir: runs/latest
"""


def parse_manifest(lines: Iterable[str], source: str = "<manifest>") -> List[ManifestRecord]:
    """One JSON object per line; ids must be unique."""
    records: List[ManifestRecord] = []
    seen = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = ManifestRecord.model_validate(json.loads(line))
        except json.JSONDecodeError as e:
            raise ManifestError(f"{source}:{lineno}: invalid JSON: {e.msg}") from e
        except ValidationError as e:
            raise ManifestError(f"{source}:{lineno}: {e.errors()[0]['msg']}") from e
        if record.id in seen:
            raise ManifestError(f"{source}:{lineno}: duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    if not records:
        raise ManifestError(f"{source}: manifest has no records")
    return records


def load_manifest(path: Union[str, Path]) -> List[ManifestRecord]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_manifest(f, str(path))
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
