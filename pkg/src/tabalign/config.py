"""Declarative pipeline configuration with lossless JSON round-tripping.

One root seed drives everything: each stage derives its own seed by name
(see seeds.derive_seed), so stage-at-a-time runs reproduce end-to-end runs
exactly. Explicit per-stage seeds can still be pinned where exposed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .llmgen import GenerationConfig
from .predictor import PredictorSpec


@dataclass(frozen=True)
class PipelineConfig:
    input_csv: str
    output_dir: str = "out"
    schema_hint: str | None = None
    label_column: str | None = None
    documents_path: str | None = None
    instruction_paths: tuple[str, ...] = ()
    select_instruction: bool = True
    refine_instruction: bool = True
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int | None = None  # None: derived from the root seed
    seed: int = 0
    bins: int = 20
    interaction_threshold: float = 0.5
    smoothing_alpha: float = 1.0
    synthetic_fraction: float | None = 0.10  # None: generate rows_per_request * rounds
    resample_fraction: float = 0.8
    resample_with_replacement: bool = False
    attribution_sample_cap: int = 2000
    eval_runs: int = 10
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    predictor: PredictorSpec = field(default_factory=PredictorSpec)

    def __post_init__(self):
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three fractions summing to 1, got {self.split_ratios}")
        if any(r < 0 for r in self.split_ratios):
            raise ConfigError("split ratios must be nonnegative")
        if not 0.0 < self.interaction_threshold <= 1.0:
            raise ConfigError("interaction threshold must be in (0, 1]")
        if self.smoothing_alpha < 0:
            raise ConfigError("smoothing alpha must be nonnegative")
        if self.synthetic_fraction is not None and not 0.0 < self.synthetic_fraction <= 1.0:
            raise ConfigError("synthetic fraction must be in (0, 1]")
        if not 0.0 < self.resample_fraction <= 1.0:
            raise ConfigError("resample fraction must be in (0, 1]")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        if self.eval_runs < 1:
            raise ConfigError("eval_runs must be >= 1")
        if self.attribution_sample_cap < 1:
            raise ConfigError("attribution_sample_cap must be >= 1")

    def to_dict(self) -> dict:
        return {
            "input_csv": self.input_csv,
            "output_dir": self.output_dir,
            "schema_hint": self.schema_hint,
            "label_column": self.label_column,
            "documents_path": self.documents_path,
            "instruction_paths": list(self.instruction_paths),
            "select_instruction": self.select_instruction,
            "refine_instruction": self.refine_instruction,
            "split_ratios": list(self.split_ratios),
            "split_seed": self.split_seed,
            "seed": self.seed,
            "bins": self.bins,
            "interaction_threshold": self.interaction_threshold,
            "smoothing_alpha": self.smoothing_alpha,
            "synthetic_fraction": self.synthetic_fraction,
            "resample_fraction": self.resample_fraction,
            "resample_with_replacement": self.resample_with_replacement,
            "attribution_sample_cap": self.attribution_sample_cap,
            "eval_runs": self.eval_runs,
            "generation": self.generation.to_dict(),
            "predictor": self.predictor.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {
            "input_csv",
            "output_dir",
            "schema_hint",
            "label_column",
            "documents_path",
            "instruction_paths",
            "select_instruction",
            "refine_instruction",
            "split_ratios",
            "split_seed",
            "seed",
            "bins",
            "interaction_threshold",
            "smoothing_alpha",
            "synthetic_fraction",
            "resample_fraction",
            "resample_with_replacement",
            "attribution_sample_cap",
            "eval_runs",
            "generation",
            "predictor",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "input_csv" not in raw:
            raise ConfigError("config requires input_csv")
        kwargs = dict(raw)
        kwargs["instruction_paths"] = tuple(raw.get("instruction_paths", ()))
        kwargs["split_ratios"] = tuple(raw.get("split_ratios", (0.8, 0.1, 0.1)))
        kwargs["generation"] = GenerationConfig.from_dict(raw.get("generation", {}))
        kwargs["predictor"] = (
            PredictorSpec.from_dict(raw["predictor"]) if "predictor" in raw else PredictorSpec()
        )
        return cls(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(raw)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
