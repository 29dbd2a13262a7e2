import json

import pytest

from handoff.cli import main


class TestRun:
    def test_hybrid_episode_writes_outputs(self, tmp_path, capsys):
        rc = main(["run", "--task", "pick the pepper and place it on the yellow plate",
                   "--seed", "7", "--out", str(tmp_path / "ep")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "score=1.0" in out
        meta = json.loads((tmp_path / "ep" / "meta.json").read_text())
        assert meta["final_phase"] == "done"
        assert (tmp_path / "ep" / "trace.jsonl").read_text().count("\n") == \
            len((tmp_path / "ep" / "trace.jsonl").read_text().splitlines())

    def test_baseline_mode(self, tmp_path):
        rc = main(["run", "--task", "put the tape on the purple plate",
                   "--seed", "3", "--mode", "baseline", "--out", str(tmp_path)])
        assert rc == 0

    def test_unparseable_task(self, capsys):
        rc = main(["run", "--task", "do something"])
        assert rc == 2
        assert "cannot parse" in capsys.readouterr().err

    def test_scene_config_accepted(self, tmp_path):
        from handoff.config import SceneConfig, write_scene_config
        cfg_path = tmp_path / "scene.ini"
        write_scene_config(SceneConfig(), cfg_path)
        rc = main(["run", "--task", "pick the pepper onto the yellow plate",
                   "--seed", "1", "--scene", str(cfg_path)])
        assert rc == 0


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_demos")
    rc = main(["collect", "--plan", "tiny", "--seed", "5", "--out", str(out)])
    assert rc == 0
    return out


class TestDataCommands:
    def test_collect_then_validate(self, cli_dataset, capsys):
        rc = main(["validate", str(cli_dataset)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "OK" in out

    def test_validate_reports_violations(self, cli_dataset, tmp_path, capsys):
        import shutil
        corrupt = tmp_path / "corrupt"
        shutil.copytree(cli_dataset, corrupt)
        victim = next((corrupt / "episodes").iterdir())
        shutil.rmtree(victim)
        rc = main(["validate", str(corrupt), "--no-hashes"])
        assert rc == 1
        assert "violation" in capsys.readouterr().out

    def test_export_requires_a_set(self, cli_dataset, capsys):
        rc = main(["export", str(cli_dataset)])
        assert rc == 2

    def test_export_vla_and_diffusion(self, cli_dataset, tmp_path, capsys):
        rc = main(["export", str(cli_dataset), "--vla", "--diffusion",
                   "--out", str(tmp_path), "--no-images"])
        assert rc == 0
        assert (tmp_path / "vla" / "samples.jsonl").exists()
        assert (tmp_path / "diffusion" / "tape" / "samples.jsonl").exists()


class TestEval:
    def test_eval_writes_results(self, tmp_path, capsys):
        rc = main(["eval", "recovery", "--seed", "9", "--episodes", "3",
                   "--out", str(tmp_path / "rec")])
        assert rc == 0
        csv_text = (tmp_path / "rec" / "results.csv").read_text()
        assert csv_text.startswith("trial,seed,attempts")
        assert (tmp_path / "rec" / "report.md").exists()

    def test_eval_paper_mode(self, capsys):
        rc = main(["eval", "multimodal", "--paper-mode", "--seed", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "tape.monotone_non_increasing" in out
