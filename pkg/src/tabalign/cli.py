"""Command-line entry points: the full pipeline plus each stage on its own.

Stages persist their outputs under the configured output directory and
recompute splits/schemas deterministically from the config, so running the
stage subcommands one after another produces byte-identical artifacts to a
single `pipeline` run with the same seeds.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import align as align_mod
from . import attribution, evaluate, llmgen
from . import predictor as predictor_mod
from .config import PipelineConfig, load_config, save_config
from .data import (
    SplitSpec,
    Table,
    fit_bins,
    load_csv,
    load_schema_hint,
    load_table_with_schema,
    save_schema,
    split,
    with_schema,
    write_csv,
)
from .errors import ConfigError, StageError, TabalignError
from .seeds import derive_seed

ARTIFACTS = {
    "schema": "schema.json",
    "instruction": "instruction.json",
    "synthetic_raw": "synthetic_raw.csv",
    "generation_report": "generation_report.json",
    "transcripts": "transcripts.jsonl",
    "interaction_map": "interaction_map.csv",
    "feature_groups": "feature_groups.json",
    "weights": "weights.csv",
    "weight_diagnostics": "weight_diagnostics.json",
    "synthetic": "synthetic.csv",
    "evaluation": "evaluation.json",
    "resolved_config": "config_resolved.json",
}


def _artifact(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.output_dir) / ARTIFACTS[name]


@dataclass(frozen=True)
class Prepared:
    train: Table
    valid: Table
    test: Table


def _stage_seed(cfg: PipelineConfig, name: str) -> int:
    return derive_seed(cfg.seed, name)


def _resolved_generation(cfg: PipelineConfig) -> llmgen.GenerationConfig:
    gen = cfg.generation
    # seed 0 means "derive from the root seed"; any other value is honored
    return gen if gen.seed != 0 else replace(gen, seed=_stage_seed(cfg, "generation"))


def _resolved_predictor(cfg: PipelineConfig):
    spec = cfg.predictor
    return spec if spec.seed != 0 else replace(spec, seed=_stage_seed(cfg, "predictor"))


def prepare(cfg: PipelineConfig) -> Prepared:
    """Load, split, and fit encoding statistics/bins on the train split."""
    kinds_hint = None
    label = cfg.label_column
    if cfg.schema_hint:
        kinds_hint, hint_label = load_schema_hint(cfg.schema_hint)
        label = label or hint_label
    table = load_csv(cfg.input_csv, kinds_hint=kinds_hint, label_column=label)
    split_seed = cfg.split_seed if cfg.split_seed is not None else _stage_seed(cfg, "split")
    train, valid, test = split(table, SplitSpec(ratios=cfg.split_ratios, seed=split_seed))
    schema = fit_bins(train, cfg.bins)
    return Prepared(
        train=with_schema(train, schema),
        valid=with_schema(valid, schema),
        test=with_schema(test, schema),
    )


def _target_rows(cfg: PipelineConfig, train: Table) -> int:
    gen = cfg.generation
    if cfg.synthetic_fraction is None:
        return gen.rows_per_request * gen.rounds
    return max(1, math.ceil(cfg.synthetic_fraction * train.n_rows))


def _instruction_candidates(cfg: PipelineConfig) -> list[llmgen.Instruction]:
    if cfg.instruction_paths:
        texts = [Path(p).read_text(encoding="utf-8").strip() for p in cfg.instruction_paths]
    else:
        texts = list(llmgen.DEFAULT_INSTRUCTION_TEMPLATES)
    return [llmgen.Instruction(text=t) for t in texts]


def _selection_metric(cfg: PipelineConfig, prep: Prepared):
    """Score a candidate's synthetic table: train on train+synth, measure on
    the validation split (AUC for binary labels, weighted F1 otherwise)."""
    spec = replace(_resolved_predictor(cfg), seed=_stage_seed(cfg, "instruction-eval"))
    binary = len(prep.train.schema.label_column.vocabulary or ()) == 2

    def metric(synth: Table) -> float:
        report = evaluate.augmentation_utility(prep.train, prep.valid, prep.valid, synth, spec, runs=1)
        return report.mean["auc"] if binary else report.mean["f1"]

    return metric


def _resolve_instruction(cfg: PipelineConfig, prep: Prepared) -> tuple[llmgen.Instruction, list[float] | None]:
    """Select among the candidates (optional), then refine (optional)."""
    candidates = _instruction_candidates(cfg)
    gen = _resolved_generation(cfg)
    scores: list[float] | None = None
    if cfg.select_instruction and len(candidates) >= 2:
        chosen, scores = llmgen.select_instruction(
            candidates,
            prep.train,
            gen,
            _selection_metric(cfg, prep),
            seed=_stage_seed(cfg, "instruction-select"),
        )
    else:
        chosen = candidates[0]
    if cfg.refine_instruction:
        docs = ""
        if cfg.documents_path:
            docs = Path(cfg.documents_path).read_text(encoding="utf-8")
        sample_rows = list(prep.train.rows[:3])
        chosen = llmgen.refine_instruction(
            chosen, docs, sample_rows, lambda p: llmgen.call_llm(p, gen), schema=prep.train.schema
        )
    return chosen, scores


def _write_instruction(cfg: PipelineConfig, instruction: llmgen.Instruction, scores: list[float] | None) -> None:
    payload = {
        "text": instruction.text,
        "revision": instruction.revision,
        "provenance": instruction.provenance,
        "selection_scores": scores,
    }
    with open(_artifact(cfg, "instruction"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _load_instruction(cfg: PipelineConfig) -> llmgen.Instruction | None:
    path = _artifact(cfg, "instruction")
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return llmgen.Instruction(text=raw["text"], revision=raw["revision"], provenance=raw["provenance"])


def _ensure_outdir(cfg: PipelineConfig) -> None:
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)


def _stage(tag: str):
    def wrap(fn):
        def run(cfg: PipelineConfig):
            try:
                return fn(cfg)
            except ConfigError:
                raise
            except TabalignError as exc:
                raise StageError(f"[{tag}] {exc}") from exc

        run.__name__ = fn.__name__
        return run

    return wrap


@_stage("select-instruction")
def cmd_select_instruction(cfg: PipelineConfig) -> None:
    _ensure_outdir(cfg)
    prep = prepare(cfg)
    instruction, scores = _resolve_instruction(cfg, prep)
    _write_instruction(cfg, instruction, scores)


@_stage("generate")
def cmd_generate(cfg: PipelineConfig) -> None:
    _ensure_outdir(cfg)
    prep = prepare(cfg)
    save_schema(prep.train.schema, _artifact(cfg, "schema"))

    instruction = _load_instruction(cfg)
    if instruction is None:
        instruction, scores = _resolve_instruction(cfg, prep)
        _write_instruction(cfg, instruction, scores)

    gen = _resolved_generation(cfg)
    target = _target_rows(cfg, prep.train)
    rounds = max(1, math.ceil(target / gen.rows_per_request))
    synth, report = llmgen.generate_stage1(
        prep.train,
        replace(gen, rounds=rounds),
        instruction,
        _stage_seed(cfg, "stage1"),
        target_rows=target,
    )
    write_csv(synth, _artifact(cfg, "synthetic_raw"))
    with open(_artifact(cfg, "generation_report"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(_artifact(cfg, "transcripts"), "w", encoding="utf-8") as fh:
        for entry in report.transcripts:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


@_stage("attribute")
def cmd_attribute(cfg: PipelineConfig) -> None:
    _ensure_outdir(cfg)
    prep = prepare(cfg)
    model = predictor_mod.train(prep.train, _resolved_predictor(cfg))
    rng = np.random.default_rng(_stage_seed(cfg, "attribution-sample"))
    count = min(cfg.attribution_sample_cap, prep.train.n_rows)
    idx = rng.choice(prep.train.n_rows, size=count, replace=False)
    sample = [prep.train.rows[i] for i in idx]
    baselines = attribution.BaselineSet.all_zeros(model.weights[0].shape[1])
    imap = attribution.aggregate_map(model, sample, baselines)
    groups = attribution.extract_groups(imap, cfg.interaction_threshold)
    attribution.write_interaction_csv(imap, prep.train.schema, _artifact(cfg, "interaction_map"))
    attribution.save_groups(groups, _artifact(cfg, "feature_groups"))


@_stage("align")
def cmd_align(cfg: PipelineConfig) -> None:
    _ensure_outdir(cfg)
    prep = prepare(cfg)
    raw_path = _artifact(cfg, "synthetic_raw")
    groups_path = _artifact(cfg, "feature_groups")
    if not raw_path.exists():
        raise ConfigError(f"missing artifact {raw_path}; run the generate stage first")
    if not groups_path.exists():
        raise ConfigError(f"missing artifact {groups_path}; run the attribute stage first")
    synth_raw = load_table_with_schema(raw_path, prep.train.schema)
    groups = attribution.load_groups(groups_path)

    weighted = align_mod.importance_weights(
        prep.train, synth_raw, groups, _resolved_predictor(cfg), alpha=cfg.smoothing_alpha
    )
    align_mod.write_weights_csv(weighted, _artifact(cfg, "weights"))
    align_mod.save_diagnostics(weighted, _artifact(cfg, "weight_diagnostics"))

    target = max(1, int(cfg.resample_fraction * synth_raw.n_rows + 1e-9))
    final = align_mod.resample(
        weighted, target, _stage_seed(cfg, "resample"), with_replacement=cfg.resample_with_replacement
    )
    write_csv(final, _artifact(cfg, "synthetic"))


@_stage("evaluate")
def cmd_evaluate(cfg: PipelineConfig, embeddings: bool = False) -> None:
    _ensure_outdir(cfg)
    prep = prepare(cfg)
    synth_path = _artifact(cfg, "synthetic")
    if not synth_path.exists():
        raise ConfigError(f"missing artifact {synth_path}; run the align stage first")
    synth = load_table_with_schema(synth_path, prep.train.schema)
    spec = replace(_resolved_predictor(cfg), seed=_stage_seed(cfg, "evaluate"))

    original = evaluate.augmentation_utility(prep.train, prep.valid, prep.test, None, spec, runs=cfg.eval_runs)
    augmented = evaluate.augmentation_utility(prep.train, prep.valid, prep.test, synth, spec, runs=cfg.eval_runs)
    similarity = evaluate.sdv_similarity(synth, prep.train)
    evaluate.save_report(
        {
            "original": original.to_dict(),
            "augmented": augmented.to_dict(),
            "similarity_synthetic_vs_train": similarity.to_dict(),
        },
        _artifact(cfg, "evaluation"),
    )
    if embeddings:
        evaluate.write_embedding_csv(prep.train, Path(cfg.output_dir) / "embedding_train.csv")
        evaluate.write_embedding_csv(synth, Path(cfg.output_dir) / "embedding_synthetic.csv")


@_stage("pipeline")
def cmd_pipeline(cfg: PipelineConfig) -> None:
    _ensure_outdir(cfg)
    save_config(cfg, _artifact(cfg, "resolved_config"))
    cmd_select_instruction(cfg)
    cmd_generate(cfg)
    cmd_attribute(cfg)
    cmd_align(cfg)
    cmd_evaluate(cfg)


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "mock", False):
        cfg = replace(cfg, generation=replace(cfg.generation, mock_mode=True))
    if getattr(args, "clusters", None) is not None:
        cfg = replace(cfg, generation=replace(cfg.generation, exemplars_per_prompt=args.clusters))
    return cfg


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "input", None):
        cfg = PipelineConfig(input_csv=args.input)
    else:
        raise ConfigError("either --config or --input is required")
    return _apply_overrides(cfg, args)


def _check_api_key(cfg: PipelineConfig, command: str) -> None:
    needs_llm = command in ("pipeline", "generate", "select-instruction")
    if needs_llm and not cfg.generation.mock_mode and not os.environ.get(cfg.generation.api_key_env):
        raise ConfigError(
            f"environment variable {cfg.generation.api_key_env} is not set; "
            "export an API key or pass --mock"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabalign",
        description="LLM few-shot tabular synthesis with attribution-guided importance resampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in [
        ("pipeline", "run every stage end to end"),
        ("generate", "stage 1: synthesize raw rows with the LLM"),
        ("attribute", "interaction map and feature groups from the original data"),
        ("align", "stage 2: importance weights and resampling"),
        ("evaluate", "utility and similarity reports"),
        ("select-instruction", "pick and refine the generation instruction"),
    ]:
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", help="JSON pipeline configuration")
        p.add_argument("--input", help="input CSV (when no config file is given)")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--mock", action="store_true", help="use the offline deterministic mock LLM")
        p.add_argument("--clusters", type=int, help="override the exemplar cluster count")
        if name == "evaluate":
            p.add_argument("--embeddings", action="store_true", help="also write encoded-row CSVs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
        _check_api_key(cfg, args.command)
        if args.command == "pipeline":
            cmd_pipeline(cfg)
        elif args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "attribute":
            cmd_attribute(cfg)
        elif args.command == "align":
            cmd_align(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, embeddings=getattr(args, "embeddings", False))
        elif args.command == "select-instruction":
            cmd_select_instruction(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TabalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
