import csv
import json

import pytest

from aelif_lab.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main

TINY = {
    "categories": ["vase"],
    "prior_count": 20,
    "train": {"steps": 20},
    "perturb": {"count": 4},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY))
    return path


def test_train_then_sample(tmp_path, config_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(config_path), "--variant", "mask", "--p", "0.2",
                 "--out", str(out)]) == EXIT_OK
    ckpt = out / "checkpoint_vase_mask.json"
    data = json.loads(ckpt.read_text())
    assert data["config"]["aelif"]["p_max"] == 0.2
    with open(out / "loss_vase_mask.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss"] and len(rows) == 21

    assert main(["sample", str(ckpt), "-n", "3", "--seed", "4", "--out", str(out)]) == EXIT_OK
    first = json.loads((out / "samples.json").read_text())
    assert len(first["latents"]) == 3 and first["prompt"] == "a photo of sks vase"
    main(["sample", str(ckpt), "-n", "3", "--seed", "4", "--out", str(out)])
    assert json.loads((out / "samples.json").read_text()) == first
    assert main(["sample", str(ckpt), "--variant", "noise_conv", "--p", "0.5", "--sigma", "2",
                 "--out", str(out)]) == EXIT_OK


def test_perturb_writes_prompt_lists(tmp_path, config_path):
    assert main(["perturb", "--config", str(config_path), "--count", "5", "--out", str(tmp_path)]) == EXIT_OK
    prompts = json.loads((tmp_path / "prompts_vase.json").read_text())
    assert len(prompts) == 5 and len(set(prompts)) == 5


def test_eval_commands_and_report(tmp_path, config_path, capsys):
    assert main(["eval-aug", "--config", str(config_path), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert (tmp_path / "a" / "augmentation_distances.csv").exists()
    assert main(["eval-robust", "--config", str(config_path), "--ref-index", "1",
                 "--out", str(tmp_path / "b")]) == EXIT_OK
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["config"]["ref_index"] == 1
    capsys.readouterr()
    assert main(["report", str(tmp_path / "b" / "report.json")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("category,proportion\n")


def test_config_errors_exit_two(tmp_path, config_path):
    assert main(["eval-aug", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"variants": {"mask": {"mode": "mask"}}}))
    assert main(["eval-robust", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["eval-robust", "--config", str(config_path), "--ref-index", "9",
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sample", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_divergence_exits_three(tmp_path):
    cfg = dict(TINY, train={"steps": 300, "learning_rate": 50.0})
    path = tmp_path / "diverge.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == EXIT_NUMERIC


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
