# SPDX-License-Identifier: Apache-2.0
import json
from pathlib import Path

import pytest

import srppo

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def test_gae_two_steps():
    adv, ret = srppo.compute_gae([0.0, 1.0], [0.5, 0.5], 1.0, 0.95)
    assert adv == pytest.approx([0.475, 0.5])
    assert ret == pytest.approx([1.0, 1.0])


def test_config_defaults_and_errors():
    c = srppo.load_config(CONFIGS / "minimal.json", seed=5)
    assert c["seed"] == 5
    assert c["world"]["max_response_length"] == 3
    assert srppo.resolve_config(c) == c
    with pytest.raises(srppo.ConfigError, match="no_such_field"):
        srppo.resolve_config({**c, "no_such_field": 1})


def test_run_report_compare(tmp_path):
    a = srppo.run(CONFIGS / "minimal.json", output_dir=tmp_path / "a")
    b = srppo.run(CONFIGS / "minimal.json", output_dir=tmp_path / "b")
    assert (a / "ppo" / "metrics.jsonl").read_bytes() == (b / "ppo" / "metrics.jsonl").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert "ppo" in manifest["completed"]
    out = srppo.report(a)
    assert any(f.name == "summary.csv" for f in out["files"])
    assert out["absent_stages"] == []
    table = srppo.compare([a, b])
    assert table.splitlines()[0].startswith("method,")


def test_report_on_empty_dir(tmp_path):
    with pytest.raises(srppo.InputError):
        srppo.report(tmp_path)
