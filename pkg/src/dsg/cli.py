"""Command-line entry point.

Subcommands: generate, score, metrics, correlate, report, validate-data,
selftest.  Exit codes: 0 success, 1 validation/data failure, 2 backend
failure.  All file outputs are written atomically.  A ``key = value``
config file can preset any long flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, codec, scoring
from .backends import (
    HttpGenerationBackend,
    HttpQaBackend,
    SceneOracle,
    ScriptedGenerationBackend,
)
from .dataset import (
    load_human_answers,
    load_likert,
    load_prompts,
    check_references,
)
from .errors import BackendError, DsgError
from .graph import Category, SemanticTuple, Subcategory
from .metrics import (
    Judge,
    MatchJudgment,
    judge_duplicates,
    judge_matches,
    qg_quality,
    rank_correlations,
)
from .pipeline import PreambleSet, generate_batch, trace_to_dict
from .report import build_report, verify_report, write_atomic, write_report
from .selftest import run_selftest

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def load_config(path: str | None) -> dict[str, str]:
    """Parse a ``key = value`` file; '#' starts a comment."""
    if not path:
        return {}
    config: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DsgError(f"{path}:{line_no}: expected key = value")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip().strip('"')
    return config


def _apply_config(args, config: dict[str, str], keys: dict[str, type]) -> None:
    # config fills only flags the user left at None
    for key, cast in keys.items():
        if getattr(args, key, None) is None and key in config:
            setattr(args, key, cast(config[key]))


def _gen_backend(spec: str, preambles: PreambleSet):
    if spec.startswith("mock:"):
        scripts = json.loads(Path(spec[len("mock:"):]).read_text("utf-8"))
        return ScriptedGenerationBackend(scripts, preambles)
    if spec.startswith(("http://", "https://")):
        return HttpGenerationBackend(spec)
    raise DsgError(f"backend must be http(s)://... or mock:PATH, got {spec!r}")


def _qa_backend(spec: str, graphs_by_image=None):
    if spec.startswith("oracle:"):
        blob = json.loads(Path(spec[len("oracle:"):]).read_text("utf-8"))
        scenes = {
            ref: [
                SemanticTuple(i + 1, Category(c), Subcategory(s), tuple(args))
                for i, (c, s, args) in enumerate(entries)
            ]
            for ref, entries in blob["scenes"].items()
        }
        return SceneOracle(scenes, graphs_by_image or {})
    if spec.startswith(("http://", "https://")):
        return HttpQaBackend(spec)
    raise DsgError(f"qa backend must be http(s)://... or oracle:PATH, got {spec!r}")


def _read_graphs(path: str):
    with open(path, encoding="utf-8") as fp:
        return codec.read_graphs_jsonl(fp)


def _write_jsonl_atomic(path: str, rows) -> None:
    write_atomic(path, "".join(json.dumps(r) + "\n" for r in rows))


def cmd_generate(args) -> int:
    preambles = (
        PreambleSet.load_dir(args.preambles) if args.preambles else PreambleSet.default()
    )
    prompts = load_prompts(args.prompts)
    backend = _gen_backend(args.backend, preambles)
    results = generate_batch(
        prompts,
        backend,
        preambles,
        parallelism=args.parallelism,
        parse_mode=args.parse_mode,
    )
    graphs = [r.graph for r in results if r.ok]
    write_atomic(
        args.out,
        "".join(json.dumps(codec.graph_to_dict(g)) + "\n" for g in graphs),
    )
    if args.traces:
        _write_jsonl_atomic(
            args.traces, [trace_to_dict(r.trace) for r in results if r.trace is not None]
        )
    failures = [r for r in results if not r.ok]
    for r in failures:
        print(f"generate: {r.prompt_id}: {r.error_kind}: {r.error}", file=sys.stderr)
    print(f"generate: {len(graphs)}/{len(results)} graphs -> {args.out}")
    if any(r.error_kind in ("Timeout", "HttpStatus", "MalformedResponse", "BackendError") for r in failures):
        return EXIT_BACKEND
    return EXIT_VALIDATION if failures else EXIT_OK


def _load_manifest(path: str) -> dict[str, list[str]]:
    image_map: dict[str, list[str]] = {}
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        row = json.loads(line)
        refs = row.get("image_refs", [row.get("image_ref")])
        for ref in refs:
            if not isinstance(ref, str):
                raise DsgError(f"{path}:{line_no}: bad image ref {ref!r}")
            image_map.setdefault(row["prompt_id"], []).append(ref)
    return image_map


def cmd_score(args) -> int:
    graphs = _read_graphs(args.graphs)
    image_map = _load_manifest(args.images)
    graphs_by_image = {
        ref: g for g in graphs for ref in image_map.get(g.prompt_id, ())
    }
    backend = _qa_backend(args.qa_backend, graphs_by_image)
    results = scoring.evaluate_batch(
        graphs,
        image_map,
        backend,
        mode=args.mode,
        parallelism=args.parallelism,
        on_backend_error=args.on_error,
    )
    evaluations = [r.evaluation for r in results if r.ok]
    write_atomic(
        args.out,
        "".join(
            json.dumps(scoring.evaluation_to_dict(ev)) + "\n" for ev in evaluations
        ),
    )
    failures = [r for r in results if not r.ok]
    for r in failures:
        print(f"score: {r.prompt_id} x {r.image_ref}: {r.error_kind}: {r.error}", file=sys.stderr)
    print(f"score: {len(evaluations)}/{len(results)} items -> {args.out}")
    if any(r.error_kind in ("Timeout", "HttpStatus", "MalformedResponse", "BackendError") for r in failures):
        return EXIT_BACKEND
    return EXIT_VALIDATION if failures else EXIT_OK


def cmd_metrics(args) -> int:
    graphs = _read_graphs(args.graphs)
    human_tuples = None
    if args.human_tuples:
        human_tuples = {}
        for line in Path(args.human_tuples).read_text("utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            human_tuples[row["prompt_id"]] = [
                SemanticTuple(
                    t["id"], Category(t["category"]), Subcategory(t["subcategory"]), tuple(t["args"])
                )
                for t in row["tuples"]
            ]
    judge_backend = None
    if args.judge and args.judge != "baseline":
        judge_backend = HttpGenerationBackend(args.judge)
    judge_name = (Judge.LLM if judge_backend else Judge.LEXICAL).value

    rows = []
    for g in graphs:
        truth = human_tuples.get(g.prompt_id) if human_tuples else None
        matches = judge_matches(g, truth, judge_backend)
        duplicates = judge_duplicates(g, judge_backend)
        quality = qg_quality(g, truth, matches, duplicates)
        rows.append(
            {
                "prompt_id": g.prompt_id,
                "judge": judge_name,
                "precision": quality.precision,
                "recall": quality.recall,
                "uniqueness": quality.uniqueness,
                "duplicate_sets": [sorted(s) for s in quality.duplicate_sets],
                "dependency_valid_ratio": quality.dependency_valid_ratio,
                "atomicity": quality.atomicity,
            }
        )
    out_dir = Path(args.out)
    _write_jsonl_atomic(str(out_dir / "qg_quality.jsonl"), rows)

    def mean_of(key):
        vals = [r[key] for r in rows if r[key] is not None]
        return sum(vals) / len(vals) if vals else None

    summary = {
        "judge": judge_name,
        "prompts": len(rows),
        "precision": mean_of("precision"),
        "recall": mean_of("recall"),
        "uniqueness": mean_of("uniqueness"),
        "dependency_valid_ratio": mean_of("dependency_valid_ratio"),
        "atomicity": mean_of("atomicity"),
    }
    write_atomic(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"metrics: {len(rows)} prompts -> {out_dir}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    with open(args.item_scores, encoding="utf-8") as fp:
        evaluations = scoring.read_evaluations_jsonl(fp)
    likert = load_likert(args.likert)
    ratings: dict[tuple[str, str], list[int]] = {}
    for rec in likert:
        ratings.setdefault((rec.prompt_id, rec.image_ref), []).append(rec.rating)
    ev_by_key = {
        (ev.prompt_id, ev.image_ref): ev
        for ev in evaluations
        if ev.average_score is not None
    }
    missing = sorted(k for k in ratings if k not in ev_by_key)
    if missing:
        raise DsgError(f"{len(missing)} rated item(s) have no evaluation, first: {missing[0]}")
    xs, ys = [], []
    for key in sorted(ratings):
        xs.append(sum(ratings[key]) / len(ratings[key]))
        ys.append(ev_by_key[key].average_score)
    result = rank_correlations(xs, ys)
    out = {
        "spearman_rho": result.spearman_rho,
        "kendall_tau": result.kendall_tau,
        "n": result.n,
        "ties": {"x": result.tie_counts.x, "y": result.tie_counts.y, "both": result.tie_counts.both},
    }
    print(json.dumps(out, indent=2))
    if args.out:
        write_atomic(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.evaluations, encoding="utf-8") as fp:
        evaluations = scoring.read_evaluations_jsonl(fp)
    prompts = load_prompts(args.prompts)
    graphs = None
    if args.graphs:
        graphs = {g.prompt_id: g for g in _read_graphs(args.graphs)}
    likert = load_likert(args.likert) if args.likert else None
    qg_summary = None
    if args.qg_summary:
        qg_summary = json.loads(Path(args.qg_summary).read_text("utf-8"))
    config = load_config(args.config) if args.config else None
    report = build_report(
        evaluations,
        prompts,
        graphs=graphs,
        likert=likert,
        qg_summary=qg_summary,
        min_group_n=args.min_group_n,
        config=config,
    )
    verify_report(report, evaluations, prompts, graphs)
    written = write_report(report, args.out)
    for path in written:
        print(f"report: wrote {path}")
    return EXIT_OK


def cmd_validate_data(args) -> int:
    problems: list[str] = []
    prompts = load_prompts(args.prompts)
    print(f"validate-data: {len(prompts)} prompts ok")
    if args.likert:
        likert = load_likert(args.likert)
        print(f"validate-data: {len(likert)} likert ratings ok")
    graphs = None
    if args.graphs:
        graphs = {g.prompt_id: g for g in _read_graphs(args.graphs)}
        print(f"validate-data: {len(graphs)} graphs ok")
        known = {p.prompt_id for p in prompts}
        for pid in graphs:
            if pid not in known:
                problems.append(f"graph references unknown prompt {pid!r}")
    if args.answers:
        answers = load_human_answers(args.answers)
        print(f"validate-data: {len(answers)} human answers ok")
        if graphs is not None:
            problems.extend(check_references(answers, graphs))
    for p in problems:
        print(f"validate-data: {p}", file=sys.stderr)
    print("validate-data: FAIL" if problems else "validate-data: PASS")
    return EXIT_VALIDATION if problems else EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="dsg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dsg-eval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="generate question graphs from prompts")
    p.add_argument("--prompts", required=True)
    p.add_argument("--backend", required=True, help="http(s)://HOST or mock:SCRIPT.json")
    p.add_argument("--preambles", help="directory with tuples/questions/dependencies .txt")
    p.add_argument("--out", required=True)
    p.add_argument("--traces", help="write per-prompt generation traces here")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--parse-mode", dest="parse_mode", choices=[codec.STRICT, codec.LENIENT])
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate, config_keys={"parallelism": int, "parse_mode": str})

    p = sub.add_parser("score", help="answer graphs against images and aggregate scores")
    p.add_argument("--graphs", required=True)
    p.add_argument("--images", required=True, help="JSONL manifest: prompt_id,image_ref")
    p.add_argument("--qa-backend", dest="qa_backend", required=True, help="http(s)://HOST or oracle:SCENES.json")
    p.add_argument("--mode", choices=[scoring.SKIP, scoring.ZERO_OUT])
    p.add_argument("--out", required=True)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--on-error", dest="on_error", choices=[scoring.FAIL_ITEM, scoring.ZERO_AND_FLAG])
    p.add_argument("--config")
    p.set_defaults(
        func=cmd_score,
        config_keys={"parallelism": int, "mode": str, "on_error": str},
    )

    p = sub.add_parser("metrics", help="question-set quality metrics")
    p.add_argument("--graphs", required=True)
    p.add_argument("--human-tuples", dest="human_tuples")
    p.add_argument("--judge", help="http(s)://HOST or 'baseline' (default)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_metrics, config_keys={"judge": str})

    p = sub.add_parser("correlate", help="rank correlations of item scores vs Likert ratings")
    p.add_argument("--item-scores", dest="item_scores", required=True)
    p.add_argument("--likert", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_correlate, config_keys={})

    p = sub.add_parser("report", help="aggregate evaluations into report tables")
    p.add_argument("--evaluations", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--graphs")
    p.add_argument("--likert")
    p.add_argument("--qg-summary", dest="qg_summary")
    p.add_argument("--min-group-n", dest="min_group_n", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_report, config_keys={"min_group_n": int})

    p = sub.add_parser("validate-data", help="check data files and cross references")
    p.add_argument("--prompts", required=True)
    p.add_argument("--likert")
    p.add_argument("--answers")
    p.add_argument("--graphs")
    p.add_argument("--config")
    p.set_defaults(func=cmd_validate_data, config_keys={})

    p = sub.add_parser("selftest", help="run the built-in mock pipeline")
    p.set_defaults(func=lambda args: run_selftest(), config_keys={})

    return parser


_DEFAULTS = {
    "parallelism": 1,
    "parse_mode": codec.STRICT,
    "mode": scoring.SKIP,
    "on_error": scoring.FAIL_ITEM,
    "judge": "baseline",
    "min_group_n": 30,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(getattr(args, "config", None))
    _apply_config(args, config, getattr(args, "config_keys", {}))
    for key, default in _DEFAULTS.items():
        if getattr(args, key, "missing") is None:
            setattr(args, key, default)
    try:
        return args.func(args)
    except BackendError as err:
        print(f"dsg: backend error: {err}", file=sys.stderr)
        return EXIT_BACKEND
    except DsgError as err:
        print(f"dsg: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as err:
        print(f"dsg: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
