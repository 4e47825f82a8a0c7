import json
import subprocess
import sys
import time

import pytest

from safewcet.cli import EXIT_INVALID, EXIT_OK, EXIT_STAGE, main
from safewcet.learning import LearnParams
from safewcet.model import save_system
from safewcet.pipeline import MANIFEST, PipelineConfig, replay, sha256_file, stage_seed
from safewcet.search import SearchParams
from safewcet.subjects import load_fixture

TINY_GEN = {"n": 3, "omega": 2, "nw": 3, "m": 0, "u_target": 0.95, "lam": None,
            "horizon": 200.0, "t_max": 100.0, "seed": 2}


def tiny_config(seed=2, **extra):
    doc = {
        "seed": seed, "jobs": 1,
        "generator": {**TINY_GEN, "seed": seed},
        "search": {"np": 4, "ns": 2, "iterations": 5},
        "learn": {"updates": 2, "samples": 10, "test_cases": 2, "trees": 20},
        "baseline": {"enabled": True},
        "evaluate": {"enabled": True, "runs": 20},
    }
    doc.update(extra)
    return doc


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(tiny_config()))
    t0 = time.perf_counter()
    code = main(["pipeline", str(cfg), "--out", str(root / "run")])
    return root, code, time.perf_counter() - t0


def test_smoke_pipeline_completes_quickly(run):
    root, code, secs = run
    assert code == EXIT_OK
    assert secs < 60
    names = set(json.loads((root / "run" / MANIFEST).read_text())["artifacts"])
    assert names == {"system.json", "archive.json", "dataset.csv", "border.json", "training.csv",
                     "baseline_dataset.csv", "bestbox.json", "evaluation.json", "evaluation.csv"}


def test_manifest_hashes_match_files(run):
    root, _, _ = run
    doc = json.loads((root / "run" / MANIFEST).read_text())
    for name, digest in doc["artifacts"].items():
        assert sha256_file(root / "run" / name) == digest
    assert doc["stage_seeds"]["search"] == stage_seed(2, "search")


def test_replay_via_cli(run):
    root, _, _ = run
    assert main(["pipeline", str(root / "run" / MANIFEST), "--replay", "--out", str(root / "again")]) == EXIT_OK
    for name in json.loads((root / "run" / MANIFEST).read_text())["artifacts"]:
        assert (root / "again" / name).read_bytes() == (root / "run" / name).read_bytes()


def test_replay_with_other_job_count(run, tmp_path):
    root, _, _ = run
    doc = json.loads((root / "run" / MANIFEST).read_text())
    doc["config"]["jobs"] = 2
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    _, mismatched = replay(path, tmp_path / "r")
    assert mismatched == []


def test_stage_failure_exit_code_and_partial_outputs(tmp_path):
    # with this seed every search row is safe, so learning cannot start
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(tiny_config(seed=1)))
    assert main(["pipeline", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_STAGE
    doc = json.loads((tmp_path / "run" / MANIFEST).read_text())
    assert doc["failed_stage"] == "learn"
    assert {"system.json", "archive.json", "dataset.csv"} <= set(doc["artifacts"])
    assert (tmp_path / "run" / "dataset.csv").exists()


def test_missing_system_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "nowhere.json"}))
    assert main(["pipeline", str(cfg), "--out", str(tmp_path / "run")]) == EXIT_INVALID
    assert main(["search", "--system", str(tmp_path / "nowhere.json")]) == EXIT_INVALID


def test_invalid_system_exit_code(tmp_path):
    doc = {"cores": 1, "partitions": [{"id": "P", "budget_percent": "100"}],
           "tasks": [{"id": "a", "kind": "periodic", "period": "4", "wcet": ["2", "5"], "deadline": "4",
                      "priority": 1, "partition": "P"}]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["search", "--system", str(path), "--iters", "1"]) == EXIT_INVALID


def test_unknown_config_keys_are_rejected():
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"generator": {}, "serach": {}})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"generator": {}, "search": {"population": 3}})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({})


def test_defaults_match_reference_parameter_block():
    s, l = SearchParams(), LearnParams()
    assert (s.np, s.pc, s.pm, s.iterations, s.ns) == (10, 0.7, 0.2, 1000, 20)
    assert (l.samples, l.updates) == (100, 100)


def test_label_budget_matching():
    cfg = PipelineConfig.from_dict({"generator": {}})
    assert cfg.label_budget() == 1000 * 10 * 20 + 100 * 100 * 10
    assert cfg.baseline_iterations() == 1500
    assert cfg.baseline_iterations(labeled=201) == 2


# ---------------------------------------------------------------------------
# individual subcommands chained by hand

@pytest.fixture(scope="module")
def chain(run):
    root, _, _ = run
    return root / "run"


def test_generate_sweep(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"n": 5, "nw": 4}))
    assert main(["generate", "--config", str(cfg), "--sweep", "n=4,5", "--replicates", "2", "--out", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["systems"]) == 4
    assert "wrote 4 system(s)" in capsys.readouterr().out


def test_generate_bad_config(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"n": 0}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INVALID


def test_search_and_baseline_subcommands(chain, tmp_path):
    sysf = str(chain / "system.json")
    assert main(["search", "--system", sysf, "--pop", "4", "--ns", "2", "--iters", "2", "--seed", "1",
                 "--jobs", "1", "--out", str(tmp_path / "s")]) == EXIT_OK
    assert len((tmp_path / "s" / "dataset.csv").read_text().splitlines()) == 1 + 2 * 4 * 2
    code = main(["baseline", "--system", sysf, "--pop", "4", "--ns", "2", "--iters", "2", "--seed", "1",
                 "--jobs", "1", "--out", str(tmp_path / "b")])
    assert code in (EXIT_OK, EXIT_STAGE)  # EXIT_STAGE only when no safe box exists


def test_learn_subcommand(chain, tmp_path, capsys):
    code = main(["learn", "--system", str(chain / "system.json"), "--dataset", str(chain / "dataset.csv"),
                 "--archive", str(chain / "archive.json"), "--updates", "1", "--samples", "5",
                 "--test-cases", "1", "--jobs", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert json.loads((tmp_path / "border.json").read_text())["p_s"] >= 0
    assert "p_s=" in capsys.readouterr().out


@pytest.mark.parametrize("box", ["border.json", "bestbox.json"])
def test_evaluate_subcommand(chain, tmp_path, capsys, box):
    doc = json.loads((chain / box).read_text())
    if box == "bestbox.json" and not doc.get("upper"):
        pytest.skip("baseline found no safe box")
    code = main(["evaluate", "--system", str(chain / "system.json"), "--box", str(chain / box),
                 "--runs", "5", "--seed", "0", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["runs"] == 5 and 0 <= out["probability"] <= 1
    assert len((tmp_path / "verdicts.csv").read_text().splitlines()) == 6


def test_compare_subcommand(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("volume\n1\n2\n3\n")
    (tmp_path / "b.csv").write_text("4\n5\n6\n")
    assert main(["compare", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["a12"] == 0.0 and out["p_value"] == pytest.approx(0.1)


def test_report_subcommand(chain, tmp_path):
    border = json.loads((chain / "border.json").read_text())
    system = json.loads((chain / "system.json").read_text())
    ranged = [t["id"] for t in system["tasks"] if t["wcet"][0] != t["wcet"][1]]
    out = tmp_path / "grid.csv"
    assert main(["report", "--system", str(chain / "system.json"), "--border", str(chain / "border.json"),
                 "--pair", ",".join(ranged[:2]), "--steps", "4", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 16
    assert border["p_s"] >= 0
    assert main(["report", "--system", str(chain / "system.json"), "--border", str(chain / "border.json"),
                 "--pair", "nope"]) == EXIT_INVALID


def test_simulate_subcommand_on_fixture(tmp_path, capsys):
    from importlib import resources
    spec = load_fixture("two_core")
    save_system(spec, tmp_path / "two_core.json")
    trace = json.loads(resources.files("safewcet").joinpath("fixtures", "two_core_trace.json").read_text())
    (tmp_path / "tc.json").write_text(json.dumps(trace["test_case"]))
    wcets = ",".join(f"{k}={v}" for k, v in trace["wcets"].items())
    args = ["simulate", "--system", str(tmp_path / "two_core.json"), "--test-case", str(tmp_path / "tc.json"), "--wcets", wcets]
    assert main(args + ["--trace"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(trace["tuples"])
    assert main(args) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["schedulable"] is False


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "safewcet.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("generate", "search", "baseline", "learn", "evaluate", "compare", "pipeline", "report"):
        assert sub in proc.stdout
