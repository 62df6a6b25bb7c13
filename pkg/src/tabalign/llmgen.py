"""Stage 1: instruction handling, few-shot prompt construction, LLM calls,
and row parsing.

The client speaks the common JSON chat-completion protocol, so any
compatible endpoint works. A deterministic offline mock is a first-class
implementation, not a test shim: it reads the schema block, the exemplar
rows, and the requested row count straight out of the prompt and resamples
exemplar values column by column, optionally with a configured categorical
skew. Everything downstream of it behaves exactly as with a live endpoint.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import requests

from .data import MISSING_TOKEN, NUMERICAL, Row, Table, TableSchema, parse_number, format_value
from .errors import ConfigError, GenerationError, TransportError
from .exemplar import ExemplarSet, cluster, draw_exemplars
from .seeds import derive_seed

logger = logging.getLogger(__name__)

MAX_REFINEMENT_ROUNDS = 5
VOCAB_PREVIEW_LIMIT = 50

SCHEMA_MARKER = "Table schema:"
EXEMPLAR_MARKER = "Example rows (CSV):"
REFINE_MARKER = "Current instruction:"

# Original prompt seeds shipped with the package (not sourced from any
# external corpus); selection picks the best performer per dataset.
DEFAULT_INSTRUCTION_TEMPLATES = (
    "You are a data synthesis assistant. Given a table schema and a few example rows, "
    "produce new rows that plausibly come from the same source. Match each column's type "
    "and value range, keep realistic relationships between columns, and never copy an "
    "example row verbatim.",
    "Act as a statistician creating additional records for a tabular dataset. Study the "
    "example rows, infer how the columns relate, and emit new records consistent with "
    "those patterns. Preserve the approximate frequency of each category and the spread "
    "of each numeric column.",
    "Your task is to extend a dataset with synthetic records. First reason silently about "
    "the meaning of every column and how values co-occur in the examples, then write new "
    "rows that could be mistaken for real entries. Respect column order and formats exactly.",
    "Generate candidate rows for the table described below. Requirements: values must be "
    "valid for their column type, categorical values must come from the listed options, "
    "numeric values must stay within the observed range, and rows should be varied rather "
    "than repetitive.",
    "You are simulating the process that produced the example records. Imagine plausible "
    "new cases drawn from the same population, including less common combinations, and "
    "write them as CSV rows. Prioritize faithfulness to the joint distribution over novelty.",
)


@dataclass(frozen=True)
class Instruction:
    text: str
    revision: int = 0  # 0 = manual seed; refinement bumps it, capped at 5
    provenance: str = "manual"  # "manual" | "refined"

    def __post_init__(self):
        if self.revision > MAX_REFINEMENT_ROUNDS:
            raise ConfigError(f"instruction revision {self.revision} exceeds {MAX_REFINEMENT_ROUNDS}")
        if self.provenance not in ("manual", "refined"):
            raise ConfigError(f"unknown instruction provenance {self.provenance!r}")


@dataclass(frozen=True)
class MockBias:
    """Skew the mock's marginal for one categorical column toward a value."""

    column: str
    value: str
    probability: float


@dataclass(frozen=True)
class GenerationConfig:
    exemplars_per_prompt: int = 20
    rows_per_request: int = 20
    rounds: int = 4
    model_name: str = "llama-3-70b-instruct"
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    temperature: float = 0.7
    max_output_tokens: int = 2048
    mock_mode: bool = False
    mock_bias: MockBias | None = None
    seed: int = 0
    max_in_flight: int = 1
    api_key_env: str = "TABALIGN_API_KEY"
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.exemplars_per_prompt < 1 or self.rows_per_request < 1 or self.rounds < 1:
            raise ConfigError("exemplars_per_prompt, rows_per_request, and rounds must be >= 1")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")

    def to_dict(self) -> dict:
        raw = {
            "exemplars_per_prompt": self.exemplars_per_prompt,
            "rows_per_request": self.rows_per_request,
            "rounds": self.rounds,
            "model_name": self.model_name,
            "endpoint": self.endpoint,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "mock_mode": self.mock_mode,
            "mock_bias": None,
            "seed": self.seed,
            "max_in_flight": self.max_in_flight,
            "api_key_env": self.api_key_env,
            "timeout_s": self.timeout_s,
        }
        if self.mock_bias is not None:
            raw["mock_bias"] = {
                "column": self.mock_bias.column,
                "value": self.mock_bias.value,
                "probability": self.mock_bias.probability,
            }
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "GenerationConfig":
        bias = raw.get("mock_bias")
        return cls(
            exemplars_per_prompt=raw.get("exemplars_per_prompt", 20),
            rows_per_request=raw.get("rows_per_request", 20),
            rounds=raw.get("rounds", 4),
            model_name=raw.get("model_name", "llama-3-70b-instruct"),
            endpoint=raw.get("endpoint", "http://localhost:8000/v1/chat/completions"),
            temperature=raw.get("temperature", 0.7),
            max_output_tokens=raw.get("max_output_tokens", 2048),
            mock_mode=raw.get("mock_mode", False),
            mock_bias=MockBias(**bias) if bias else None,
            seed=raw.get("seed", 0),
            max_in_flight=raw.get("max_in_flight", 1),
            api_key_env=raw.get("api_key_env", "TABALIGN_API_KEY"),
            timeout_s=raw.get("timeout_s", 30.0),
        )


@dataclass
class GenerationReport:
    """Accounting for one generation run. The endpoint may under-produce, so
    parsed_ok can fall short of requested; the counters always satisfy
    parsed_ok + rejected_* == candidate_lines."""

    requested: int = 0
    parsed_ok: int = 0
    rejected_malformed: int = 0
    rejected_oov: int = 0
    rejected_duplicate_of_original: int = 0
    candidate_lines: int = 0
    rounds_run: int = 0
    makeup_rounds: int = 0
    transcripts: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "parsed_ok": self.parsed_ok,
            "rejected_malformed": self.rejected_malformed,
            "rejected_oov": self.rejected_oov,
            "rejected_duplicate_of_original": self.rejected_duplicate_of_original,
            "candidate_lines": self.candidate_lines,
            "rounds_run": self.rounds_run,
            "makeup_rounds": self.makeup_rounds,
        }


# ---------------------------------------------------------------------------
# prompt construction (pure functions of their inputs)


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue().rstrip("\n")


def _schema_lines(schema: TableSchema) -> list[str]:
    lines = []
    for j, col in enumerate(schema.columns):
        if col.kind == NUMERICAL:
            line = f"- {col.name}: numerical"
            if col.minimum is not None and col.maximum is not None:
                line += f" (range {format_value(col.minimum)} to {format_value(col.maximum)})"
        else:
            vocab = list(col.vocabulary or ())
            shown = ", ".join(vocab[:VOCAB_PREVIEW_LIMIT])
            if len(vocab) > VOCAB_PREVIEW_LIMIT:
                shown += f", ... and {len(vocab) - VOCAB_PREVIEW_LIMIT} more"
            role = "categorical label" if j == schema.label_index else "categorical"
            line = f"- {col.name}: {role} (values: {shown})"
        lines.append(line)
    return lines


def build_prompt(instruction: Instruction, exemplars: ExemplarSet, schema: TableSchema, n_rows: int) -> str:
    """Deterministic prompt: instruction, schema description, exemplar CSV,
    and the output directive. Byte-stable for fixed inputs."""
    if not exemplars.rows:
        raise GenerationError("prompt needs at least one exemplar")
    plural = "" if n_rows == 1 else "s"
    directive = (
        f"Output exactly {n_rows} new CSV row{plural} in the same column order as the "
        "header above. Data rows only: no header, no commentary, no code fences."
    )
    parts = [
        instruction.text.rstrip(),
        "",
        SCHEMA_MARKER,
        *_schema_lines(schema),
        "",
        EXEMPLAR_MARKER,
        _csv_line(schema.header()),
        *[_csv_line([format_value(v) for v in row]) for row in exemplars.rows],
        "",
        directive,
    ]
    return "\n".join(parts)


def build_refine_prompt(current_text: str, docs: str, sample_lines: list[str]) -> str:
    docs_block = docs.strip() if docs and docs.strip() else "(no documents provided)"
    samples_block = "\n".join(sample_lines) if sample_lines else "(no sample rows provided)"
    return "\n".join(
        [
            "You are improving an instruction used to ask a language model to synthesize "
            "tabular data. Think step by step about which schema details, value ranges, and "
            "formatting rules matter most, then output only the improved instruction text, "
            "nothing else.",
            "",
            REFINE_MARKER,
            "<<<",
            current_text,
            ">>>",
            "",
            "Reference documents:",
            docs_block,
            "",
            "Sample rows (CSV):",
            samples_block,
        ]
    )


def _split_prompt(prompt: str) -> tuple[str, str]:
    """System message = the instruction portion; user message = the rest."""
    marker = f"\n\n{SCHEMA_MARKER}\n"
    pos = prompt.find(marker)
    if pos < 0:
        return "", prompt
    return prompt[:pos], prompt[pos + 2 :]


# ---------------------------------------------------------------------------
# LLM client: HTTP with retry/backoff, or the deterministic mock

_http_post = requests.post
_sleep = time.sleep
RETRY_ATTEMPTS = 3
RETRY_BASE_S = 1.0


def call_llm(prompt: str, cfg: GenerationConfig) -> str:
    """Send one chat-completion request and return the raw response text."""
    if cfg.mock_mode:
        return _mock_complete(prompt, cfg)

    api_key = os.environ.get(cfg.api_key_env)
    if not api_key:
        raise ConfigError(f"environment variable {cfg.api_key_env} is not set (or pass --mock)")
    system, user = _split_prompt(prompt)
    messages = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": user})
    payload = {
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}

    delay = RETRY_BASE_S
    last_error: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        if attempt:
            _sleep(delay)
            delay *= 2
        try:
            response = _http_post(cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if response.status_code >= 500:
            last_error = TransportError(f"server error {response.status_code}")
            continue
        if response.status_code >= 400:
            raise ConfigError(f"endpoint rejected the request: HTTP {response.status_code}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GenerationError(f"malformed completion payload: {exc}") from exc
        if not content:
            raise GenerationError("endpoint returned an empty completion")
        return content
    raise TransportError(f"endpoint unreachable after {RETRY_ATTEMPTS} attempts: {last_error}")


def _extract_block(prompt: str, marker: str) -> list[str]:
    lines = prompt.split("\n")
    try:
        start = lines.index(marker) + 1
    except ValueError:
        return []
    block = []
    for line in lines[start:]:
        if not line.strip():
            break
        block.append(line)
    return block


def _mock_complete(prompt: str, cfg: GenerationConfig) -> str:
    """Offline stand-in for the endpoint.

    Refinement prompts are echoed back (the embedded instruction is returned
    verbatim, so refinement reaches its fixed point immediately). Generation
    prompts are answered by resampling exemplar values independently per
    column, with light jitter on numericals and the configured categorical
    skew, seeded by (cfg.seed, prompt) so identical requests give identical
    replies.
    """
    if REFINE_MARKER in prompt and "<<<" in prompt:
        inner = prompt.split("<<<\n", 1)[1].split("\n>>>", 1)[0]
        return inner

    kinds = dict(re.findall(r"^- (.+?): (numerical|categorical)", prompt, flags=re.MULTILINE))
    exemplar_block = _extract_block(prompt, EXEMPLAR_MARKER)
    if len(exemplar_block) < 2:
        raise GenerationError("mock could not find exemplar rows in the prompt")
    header = next(csv.reader([exemplar_block[0]]))
    exemplars = [next(csv.reader([line])) for line in exemplar_block[1:]]

    match = re.search(r"Output exactly (\d+) new CSV row", prompt)
    n_rows = int(match.group(1)) if match else cfg.rows_per_request

    rng = np.random.default_rng(derive_seed(cfg.seed, prompt))
    columns = list(zip(*exemplars))
    out_lines = []
    for _ in range(n_rows):
        values = []
        for name, pool in zip(header, columns):
            if kinds.get(name) == "numerical":
                floats = np.array([float(x) for x in pool])
                value = float(floats[rng.integers(len(floats))])
                spread = float(floats.std())
                if spread > 0:
                    value += float(rng.normal(0.0, 0.1 * spread))
                values.append(repr(value))
            else:
                bias = cfg.mock_bias
                if bias is not None and bias.column == name and rng.random() < bias.probability:
                    values.append(bias.value)
                else:
                    values.append(pool[rng.integers(len(pool))])
        out_lines.append(_csv_line(values))
    return "\n".join(out_lines)


# ---------------------------------------------------------------------------
# response parsing


@dataclass
class ParseCounts:
    parsed_ok: int = 0
    rejected_malformed: int = 0
    rejected_oov: int = 0
    rejected_duplicate_of_original: int = 0
    candidate_lines: int = 0


def parse_rows(raw: str, schema: TableSchema, original: Table | None = None) -> tuple[list[Row], ParseCounts]:
    """Extract schema-valid rows from raw response text.

    Tolerates surrounding prose and code fences; repeated header lines are
    skipped without counting. Candidate lines are checked for arity, types,
    and vocabulary; numerical values are clamped to the train range; rows
    identical to an original row are rejected as copies. Nothing here is
    fatal: bad lines are counted and skipped.
    """
    header = [c.strip() for c in schema.header()]
    n_cols = len(header)
    original_rows = set(original.rows) if original is not None else set()
    counts = ParseCounts()
    rows: list[Row] = []

    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("```"):
            continue
        if "," not in stripped and n_cols > 1:
            continue  # prose
        try:
            cells = [c.strip() for c in next(csv.reader([stripped]))]
        except (csv.Error, StopIteration):
            counts.candidate_lines += 1
            counts.rejected_malformed += 1
            continue
        if cells == header:
            continue  # echoed header, not a data attempt
        counts.candidate_lines += 1
        if len(cells) != n_cols:
            counts.rejected_malformed += 1
            continue

        values: list = []
        failure: str | None = None
        for cell, col in zip(cells, schema.columns):
            if col.kind == NUMERICAL:
                value = parse_number(cell)
                if value is None:
                    failure = "malformed"
                    break
                if col.minimum is not None:
                    value = max(value, col.minimum)
                if col.maximum is not None:
                    value = min(value, col.maximum)
                values.append(value)
            else:
                token = cell if cell != "" else MISSING_TOKEN
                if col.vocabulary is not None and token not in col.vocabulary:
                    failure = "oov"
                    break
                values.append(token)
        if failure == "malformed":
            counts.rejected_malformed += 1
            continue
        if failure == "oov":
            counts.rejected_oov += 1
            continue
        row = tuple(values)
        if row in original_rows:
            counts.rejected_duplicate_of_original += 1
            continue
        counts.parsed_ok += 1
        rows.append(row)
    return rows, counts


# ---------------------------------------------------------------------------
# instruction refinement and selection


def refine_instruction(
    seed_instruction: Instruction,
    docs: str,
    samples: list[Row],
    llm,
    schema: TableSchema | None = None,
    transcript: list[dict] | None = None,
) -> Instruction:
    """Iteratively rewrite the instruction, up to 5 rounds, stopping early at
    a fixed point. Every intermediate revision is logged."""
    if seed_instruction.provenance != "manual":
        raise ConfigError("refinement must start from a manual instruction")
    sample_lines: list[str] = []
    if samples:
        if schema is not None:
            sample_lines.append(_csv_line(schema.header()))
        sample_lines.extend(_csv_line([format_value(v) for v in row]) for row in samples)

    current = seed_instruction.text
    revision = 0
    for step in range(MAX_REFINEMENT_ROUNDS):
        prompt = build_refine_prompt(current, docs, sample_lines)
        output = llm(prompt).strip()
        revision = step + 1
        logger.info("instruction revision %d (%d chars)", revision, len(output))
        if transcript is not None:
            transcript.append({"kind": "refine", "revision": revision, "prompt": prompt, "response": output})
        if output == current:
            break
        current = output
    return Instruction(text=current, revision=revision, provenance="refined")


def select_instruction(
    candidates: list[Instruction],
    train_table: Table,
    cfg: GenerationConfig,
    eval_fn,
    budget_fraction: float = 0.01,
    seed: int = 0,
) -> tuple[Instruction, list[float]]:
    """Generate a small budget of rows per candidate, score each synthetic
    table with eval_fn, and return the argmax (ties: lowest index).

    A candidate whose generation yields nothing scores -inf and can only be
    selected if every candidate failed, which is an error instead.
    """
    if len(candidates) < 2:
        raise ConfigError("instruction selection needs at least two candidates")
    target = max(1, math.ceil(budget_fraction * train_table.n_rows))
    scores: list[float] = []
    failures: list[str] = []
    for index, candidate in enumerate(candidates):
        rows_per_request = min(cfg.rows_per_request, target)
        sub_cfg = replace(
            cfg,
            rows_per_request=rows_per_request,
            rounds=max(1, math.ceil(target / rows_per_request)),
        )
        try:
            synth, _ = generate_stage1(
                train_table, sub_cfg, candidate, derive_seed(seed, f"candidate:{index}"), target_rows=target
            )
            scores.append(float(eval_fn(synth)))
        except (GenerationError, TransportError) as exc:
            scores.append(float("-inf"))
            failures.append(f"candidate {index}: {exc}")
    if all(s == float("-inf") for s in scores):
        raise GenerationError("all instruction candidates failed: " + "; ".join(failures))
    best = int(np.argmax(scores))
    return candidates[best], scores


# ---------------------------------------------------------------------------
# the stage-1 loop


def generate_stage1(
    train_table: Table,
    cfg: GenerationConfig,
    instruction: Instruction,
    seed: int,
    llm=None,
    target_rows: int | None = None,
) -> tuple[Table, GenerationReport]:
    """Cluster once, then run the configured rounds of draw-prompt-call-parse.

    If parsing falls short of the target after the planned rounds, up to the
    same number of make-up rounds run before the shortfall is reported. The
    aggregate is truncated to the target when make-up overshoots.
    """
    schema = train_table.schema
    target = target_rows if target_rows is not None else cfg.rows_per_request * cfg.rounds
    complete = llm if llm is not None else (lambda prompt: call_llm(prompt, cfg))
    assignment = cluster(train_table, cfg.exemplars_per_prompt, derive_seed(seed, "cluster"))

    report = GenerationReport(requested=target)
    rows: list[Row] = []

    def run_round(index: int) -> tuple[int, str, str]:
        exemplars = draw_exemplars(
            train_table, assignment, cfg.exemplars_per_prompt, derive_seed(seed, "exemplars"), round_index=index
        )
        prompt = build_prompt(instruction, exemplars, schema, cfg.rows_per_request)
        return index, prompt, complete(prompt)

    def absorb(index: int, prompt: str, response: str) -> None:
        parsed, counts = parse_rows(response, schema, train_table)
        rows.extend(parsed)
        report.parsed_ok += counts.parsed_ok
        report.rejected_malformed += counts.rejected_malformed
        report.rejected_oov += counts.rejected_oov
        report.rejected_duplicate_of_original += counts.rejected_duplicate_of_original
        report.candidate_lines += counts.candidate_lines
        report.rounds_run += 1
        report.transcripts.append({"round": index, "prompt": prompt, "response": response})

    planned = list(range(cfg.rounds))
    if cfg.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            for index, prompt, response in pool.map(run_round, planned):
                absorb(index, prompt, response)
    else:
        for index in planned:
            absorb(*run_round(index))

    makeup = 0
    while len(rows) < target and makeup < cfg.rounds:
        index = cfg.rounds + makeup
        absorb(*run_round(index))
        makeup += 1
        report.makeup_rounds = makeup

    if not rows:
        raise GenerationError(
            f"no synthetic rows parsed after {report.rounds_run} rounds "
            f"({report.candidate_lines} candidate lines seen)"
        )
    if len(rows) > target:
        del rows[target:]
    if len(rows) < target:
        logger.warning("generation shortfall: %d of %d requested rows", len(rows), target)
    return Table(schema=schema, rows=tuple(rows)), report
