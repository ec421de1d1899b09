import json
import random
import subprocess
import sys
from pathlib import Path

import pytest

from dsg import codec
from dsg.backends import tuple_key
from dsg.cli import main
from dsg.pipeline import PreambleSet

from fixture_gen import corpus_with_scripts


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def workspace(tmp_path):
    """Prompts + mock LLM script + oracle scenes for a 5-prompt corpus."""
    rng = random.Random(77)
    preambles = PreambleSet.default()
    texts, graphs, scripts = corpus_with_scripts(rng, 5, preambles)

    prompts_path = tmp_path / "prompts.jsonl"
    write_jsonl(
        prompts_path,
        [{"prompt_id": t, "text": t, "source": "tifa160"} for t in texts],
    )
    script_path = tmp_path / "llm_scripts.json"
    script_path.write_text(json.dumps(scripts), encoding="utf-8")

    manifest_path = tmp_path / "images.jsonl"
    write_jsonl(
        manifest_path,
        [{"prompt_id": t, "image_ref": f"mock/{i:03d}.png"} for i, t in enumerate(texts)],
    )
    scenes = {
        f"mock/{i:03d}.png": [list(tuple_key(t))[:2] + [list(t.args)] for t in graphs[text].tuples]
        for i, text in enumerate(texts)
    }
    scenes_path = tmp_path / "scenes.json"
    scenes_path.write_text(json.dumps({"scenes": scenes}), encoding="utf-8")
    return {
        "tmp": tmp_path,
        "texts": texts,
        "graphs": graphs,
        "prompts": prompts_path,
        "scripts": script_path,
        "manifest": manifest_path,
        "scenes": scenes_path,
    }


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["score", "--images", "x", "--qa-backend", "y", "--out", "z"])
    assert exc.value.code == 1
    assert "--graphs" in capsys.readouterr().err


def test_unknown_backend_scheme_exit_1(workspace, capsys):
    code = main(
        [
            "generate",
            "--prompts", str(workspace["prompts"]),
            "--backend", "ftp://nope",
            "--out", str(workspace["tmp"] / "g.jsonl"),
        ]
    )
    assert code == 1


def test_generate_score_report_flow(workspace, capsys):
    tmp = workspace["tmp"]
    graphs_path = tmp / "graphs.jsonl"
    traces_path = tmp / "traces.jsonl"
    code = main(
        [
            "generate",
            "--prompts", str(workspace["prompts"]),
            "--backend", f"mock:{workspace['scripts']}",
            "--out", str(graphs_path),
            "--traces", str(traces_path),
        ]
    )
    assert code == 0
    with open(graphs_path, encoding="utf-8") as fp:
        graphs = codec.read_graphs_jsonl(fp)
    assert len(graphs) == 5
    for g in graphs:
        assert g == workspace["graphs"][g.prompt_id]
    assert len(traces_path.read_text().splitlines()) == 5

    evaluations_path = tmp / "evaluations.jsonl"
    code = main(
        [
            "score",
            "--graphs", str(graphs_path),
            "--images", str(workspace["manifest"]),
            "--qa-backend", f"oracle:{workspace['scenes']}",
            "--out", str(evaluations_path),
        ]
    )
    assert code == 0
    with open(evaluations_path, encoding="utf-8") as fp:
        evaluations = [json.loads(line) for line in fp if line.strip()]
    assert len(evaluations) == 5
    assert all(ev["average"] == 1.0 for ev in evaluations)

    out_dir = tmp / "report"
    code = main(
        [
            "report",
            "--evaluations", str(evaluations_path),
            "--prompts", str(workspace["prompts"]),
            "--graphs", str(graphs_path),
            "--out", str(out_dir),
        ]
    )
    assert code == 0
    by_source = (out_dir / "by_source.csv").read_text("utf-8").splitlines()
    assert by_source[0] == "model,tifa160,overall"
    assert by_source[1] == "mock,1.000,1.000"
    summary = json.loads((out_dir / "summary.json").read_text("utf-8"))
    assert summary["by_source"]["mock"]["tifa160"]["n"] == 5


def test_metrics_command(workspace, tmp_path):
    tmp = workspace["tmp"]
    graphs_path = tmp / "graphs.jsonl"
    main(
        [
            "generate",
            "--prompts", str(workspace["prompts"]),
            "--backend", f"mock:{workspace['scripts']}",
            "--out", str(graphs_path),
        ]
    )
    out_dir = tmp / "metrics"
    code = main(["metrics", "--graphs", str(graphs_path), "--judge", "baseline", "--out", str(out_dir)])
    assert code == 0
    summary = json.loads((out_dir / "summary.json").read_text("utf-8"))
    assert summary["judge"] == "lexical_baseline"
    assert summary["dependency_valid_ratio"] == 1.0
    rows = [json.loads(l) for l in (out_dir / "qg_quality.jsonl").read_text().splitlines()]
    assert len(rows) == 5
    # fixture questions repeat the head noun, so the lexical floor matches all
    assert all(r["precision"] == 1.0 for r in rows)


def test_correlate_command(workspace, capsys):
    tmp = workspace["tmp"]
    graphs_path = tmp / "graphs.jsonl"
    evaluations_path = tmp / "evaluations.jsonl"
    main(["generate", "--prompts", str(workspace["prompts"]), "--backend", f"mock:{workspace['scripts']}", "--out", str(graphs_path)])
    main(["score", "--graphs", str(graphs_path), "--images", str(workspace["manifest"]), "--qa-backend", f"oracle:{workspace['scenes']}", "--out", str(evaluations_path)])

    # vary scores by deleting one scene tuple for 2 of the 5 items
    scenes = json.loads(workspace["scenes"].read_text())
    keys = sorted(scenes["scenes"])
    for k in keys[:2]:
        scenes["scenes"][k] = scenes["scenes"][k][1:]
    broken_scenes = tmp / "scenes_broken.json"
    broken_scenes.write_text(json.dumps(scenes), encoding="utf-8")
    main(["score", "--graphs", str(graphs_path), "--images", str(workspace["manifest"]), "--qa-backend", f"oracle:{broken_scenes}", "--out", str(evaluations_path)])

    likert_path = tmp / "likert.jsonl"
    rows = []
    with open(evaluations_path, encoding="utf-8") as fp:
        for line in fp:
            ev = json.loads(line)
            rating = 5 if ev["average"] == 1.0 else 2
            rows.append(
                {"prompt_id": ev["prompt_id"], "image_ref": ev["image_ref"], "rater_id": "r1", "rating": rating}
            )
    write_jsonl(likert_path, rows)
    out_path = tmp / "corr.json"
    code = main(["correlate", "--item-scores", str(evaluations_path), "--likert", str(likert_path), "--out", str(out_path)])
    assert code == 0
    result = json.loads(out_path.read_text("utf-8"))
    assert result["n"] == 5
    assert result["spearman_rho"] > 0.8  # scores built to track ratings


def test_validate_data_pass_and_fail(workspace, tmp_path, capsys):
    code = main(["validate-data", "--prompts", str(workspace["prompts"])])
    assert code == 0
    assert "PASS" in capsys.readouterr().out

    bad = tmp_path / "bad_prompts.jsonl"
    write_jsonl(bad, [{"prompt_id": "p", "text": "x", "source": "nope"}])
    code = main(["validate-data", "--prompts", str(bad)])
    assert code == 1


def test_validate_data_referential_integrity(workspace, tmp_path, capsys):
    tmp = workspace["tmp"]
    graphs_path = tmp / "graphs.jsonl"
    main(["generate", "--prompts", str(workspace["prompts"]), "--backend", f"mock:{workspace['scripts']}", "--out", str(graphs_path)])
    answers = tmp / "answers.jsonl"
    write_jsonl(
        answers,
        [
            {"prompt_id": workspace["texts"][0], "image_ref": "i", "question_id": 999, "rater_id": "r", "answer": "yes"},
        ],
    )
    code = main(
        [
            "validate-data",
            "--prompts", str(workspace["prompts"]),
            "--graphs", str(graphs_path),
            "--answers", str(answers),
        ]
    )
    assert code == 1
    assert "unknown question 999" in capsys.readouterr().err


def test_config_file_supplies_defaults(workspace, tmp_path):
    tmp = workspace["tmp"]
    config = tmp_path / "dsg.conf"
    config.write_text("parallelism = 2\nparse_mode = lenient  # comment\n", encoding="utf-8")
    graphs_path = tmp / "graphs.jsonl"
    code = main(
        [
            "generate",
            "--prompts", str(workspace["prompts"]),
            "--backend", f"mock:{workspace['scripts']}",
            "--out", str(graphs_path),
            "--config", str(config),
        ]
    )
    assert code == 0
    assert len(graphs_path.read_text().splitlines()) == 5


def test_console_entry_point_subprocess():
    result = subprocess.run(
        [sys.executable, "-m", "dsg.cli", "selftest"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert result.returncode == 0
    assert "PASS" in result.stdout


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
