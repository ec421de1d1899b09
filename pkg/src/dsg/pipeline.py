"""Three-stage graph generation against a generation backend.

Stage 1 turns a prompt into semantic tuples; stages 2 and 3 each get the
prompt plus the stage-1 tuple lines verbatim and produce the questions
and the dependency lines.  The split is structural: every stage ships
its own preamble (data file, swappable), which is what allows each stage
to carry many in-context examples.

A stage whose completion fails to parse is re-requested (same preamble)
a bounded number of times, then fails loudly.  Nothing repairs a bad
graph: a generated cycle surfaces as GraphInvalidError.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, TextIO

from . import codec
from .dataset import PromptRecord
from .errors import BackendError, DsgError, GraphError, GraphInvalidError, StageParseError
from .graph import SceneGraph, build_graph

INPUT_SLOT = "$INPUT"

STAGE_TUPLES = "tuples"
STAGE_QUESTIONS = "questions"
STAGE_DEPENDENCIES = "dependencies"
STAGES = (STAGE_TUPLES, STAGE_QUESTIONS, STAGE_DEPENDENCIES)


@dataclass(frozen=True)
class PreambleSet:
    """The three stage preambles; each must contain exactly one input slot."""

    tuple_preamble: str
    question_preamble: str
    dependency_preamble: str

    def __post_init__(self):
        for name, text in (
            ("tuple", self.tuple_preamble),
            ("question", self.question_preamble),
            ("dependency", self.dependency_preamble),
        ):
            slots = text.count(INPUT_SLOT)
            if slots != 1:
                raise ValueError(f"{name} preamble must contain exactly one {INPUT_SLOT}, found {slots}")
            if len(text.replace(INPUT_SLOT, "").strip()) == 0:
                raise ValueError(f"{name} preamble has no instructions or examples")

    @classmethod
    def default(cls) -> "PreambleSet":
        base = resources.files("dsg").joinpath("data/preambles")
        return cls(
            tuple_preamble=base.joinpath("tuples.txt").read_text("utf-8"),
            question_preamble=base.joinpath("questions.txt").read_text("utf-8"),
            dependency_preamble=base.joinpath("dependencies.txt").read_text("utf-8"),
        )

    @classmethod
    def load_dir(cls, path: str | Path) -> "PreambleSet":
        path = Path(path)
        return cls(
            tuple_preamble=(path / "tuples.txt").read_text("utf-8"),
            question_preamble=(path / "questions.txt").read_text("utf-8"),
            dependency_preamble=(path / "dependencies.txt").read_text("utf-8"),
        )

    def for_stage(self, stage: str) -> str:
        return {
            STAGE_TUPLES: self.tuple_preamble,
            STAGE_QUESTIONS: self.question_preamble,
            STAGE_DEPENDENCIES: self.dependency_preamble,
        }[stage]


@dataclass(frozen=True)
class RetryConfig:
    max_retries: int = 2  # re-requests per stage after the first attempt

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class StageTrace:
    attempts: list[str] = field(default_factory=list)
    warnings: list[codec.ParseWarning] = field(default_factory=list)

    @property
    def retries(self) -> int:
        return max(0, len(self.attempts) - 1)


@dataclass
class GenerationTrace:
    prompt_id: str
    stages: dict[str, StageTrace] = field(default_factory=dict)


def stage_input(prompt_text: str, tuples_text: str | None = None) -> str:
    """Prompt alone for stage 1; prompt + blank line + tuple lines after."""
    if tuples_text is None:
        return prompt_text
    return f"{prompt_text}\n\n{tuples_text}"


def _as_record(prompt) -> PromptRecord:
    if isinstance(prompt, PromptRecord):
        return prompt
    text = str(prompt)
    pid = hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]
    return PromptRecord(prompt_id=pid, text=text, source="tifa160")


def _run_stage(stage, preamble, input_text, backend, config, trace, parser, parse_mode):
    st = trace.stages.setdefault(stage, StageTrace())
    last_err: Exception | None = None
    for _attempt in range(config.max_retries + 1):
        try:
            completion = backend.complete(preamble, input_text)
        except BackendError as err:
            last_err = err
            st.attempts.append(f"<backend error: {err}>")
            continue
        st.attempts.append(completion)
        try:
            return completion, parser(completion, parse_mode, st.warnings)
        except DsgError as err:
            last_err = err
    if isinstance(last_err, BackendError):
        raise last_err
    raise StageParseError(stage, st.attempts, last_err)


def generate_dsg(
    prompt,
    backend,
    preambles: PreambleSet | None = None,
    config: RetryConfig | None = None,
    parse_mode: str = codec.STRICT,
) -> tuple[SceneGraph, GenerationTrace]:
    """Run the three stages for one prompt and assemble the validated graph.

    ``prompt`` is a PromptRecord or a bare string.  The trace keeps every
    raw completion (including failed attempts) and any lenient-mode parse
    warnings.  Raises BackendError, StageParseError, or GraphInvalidError.
    """
    record = _as_record(prompt)
    if not record.text.strip():
        raise ValueError("prompt text must be non-empty")
    preambles = preambles or PreambleSet.default()
    config = config or RetryConfig()
    trace = GenerationTrace(prompt_id=record.prompt_id)

    tuples_text, tuples = _run_stage(
        STAGE_TUPLES,
        preambles.tuple_preamble,
        stage_input(record.text),
        backend,
        config,
        trace,
        codec.parse_tuples,
        parse_mode,
    )
    followup_input = stage_input(record.text, tuples_text)
    _, questions = _run_stage(
        STAGE_QUESTIONS,
        preambles.question_preamble,
        followup_input,
        backend,
        config,
        trace,
        codec.parse_questions,
        parse_mode,
    )
    _, edges = _run_stage(
        STAGE_DEPENDENCIES,
        preambles.dependency_preamble,
        followup_input,
        backend,
        config,
        trace,
        codec.parse_dependencies,
        parse_mode,
    )
    try:
        graph = build_graph(tuples, questions, edges, prompt_id=record.prompt_id)
    except GraphError as err:
        raise GraphInvalidError(err) from err
    return graph, trace


@dataclass(frozen=True)
class GenerationResult:
    prompt_id: str
    graph: SceneGraph | None = None
    trace: GenerationTrace | None = None
    error: str | None = None
    error_kind: str | None = None

    @property
    def ok(self) -> bool:
        return self.graph is not None


def generate_batch(
    prompts: Iterable,
    backend,
    preambles: PreambleSet | None = None,
    parallelism: int = 1,
    config: RetryConfig | None = None,
    parse_mode: str = codec.STRICT,
) -> list[GenerationResult]:
    """Generate graphs for many prompts with bounded concurrency.

    Results keep input order; a failed prompt yields an error slot and
    never aborts the batch.  Within one prompt the three stages stay
    strictly sequential.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    records = [_as_record(p) for p in prompts]
    preambles = preambles or PreambleSet.default()

    def run(record: PromptRecord) -> GenerationResult:
        try:
            graph, trace = generate_dsg(record, backend, preambles, config, parse_mode)
            return GenerationResult(record.prompt_id, graph=graph, trace=trace)
        except DsgError as err:
            return GenerationResult(
                record.prompt_id, error=str(err), error_kind=type(err).__name__
            )

    if parallelism == 1:
        return [run(r) for r in records]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run, records))


# ---------------------------------------------------------------------------
# Trace persistence


def trace_to_dict(trace: GenerationTrace) -> dict:
    return {
        "prompt_id": trace.prompt_id,
        "stages": {
            stage: {
                "attempts": st.attempts,
                "retries": st.retries,
                "warnings": [
                    {"line_no": w.line_no, "reason": w.reason, "raw": w.raw}
                    for w in st.warnings
                ],
            }
            for stage, st in trace.stages.items()
        },
    }


def write_traces_jsonl(traces: Iterable[GenerationTrace], fp: TextIO) -> None:
    for trace in traces:
        fp.write(json.dumps(trace_to_dict(trace)) + "\n")
