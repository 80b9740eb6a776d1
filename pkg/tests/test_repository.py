import numpy as np
import pytest

from core.constants import CheckStatus
from core.models import CheckResult, CostMatrix, RunManifest
from core.measures import uniform_measure
from core.ot import sinkhorn
from core.repository import (
    write_table_csv, read_table_csv, read_json, save_manifest, save_plan_json,
    save_measure_json, load_measure_json
)


def test_csv_roundtrip_keeps_meta_and_full_precision(tmp_path):
    x = 0.1 + 0.2
    path = write_table_csv(tmp_path / "t.csv", ["k", "value"], [(0, x), (1, 1.0 / 3.0)],
                           meta={"seed": 7, "epsilon": 0.5})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# k,value"
    assert "# epsilon: 0.5" in lines and "# seed: 7" in lines
    assert "0.30000000000000004" in lines[-2]
    columns, data, meta = read_table_csv(path)
    assert columns == ["k", "value"]
    assert meta == {"epsilon": "0.5", "seed": "7"}
    assert data[0, 1] == x
    assert data[1, 1] == 1.0 / 3.0


def test_csv_rejects_column_mismatch(tmp_path):
    with pytest.raises(ValueError):
        write_table_csv(tmp_path / "bad.csv", ["a", "b"], [[1.0, 2.0, 3.0]])


def test_manifest_json(tmp_path):
    m = RunManifest(experiment="ergodicity", tool_version="x", config_hash="abc", seed=3,
                    generator="numpy.Philox", started="2026-01-01T00:00:00")
    m.checks = [CheckResult(name="a", status=CheckStatus.PASS, measured={"v": 1.5}),
                CheckResult(name="b", status=CheckStatus.ERROR, detail="aborted")]
    doc = read_json(save_manifest(m, tmp_path))
    assert doc["passed"] is False
    assert [c["status"] for c in doc["checks"]] == ["pass", "error"]
    assert doc["checks"][0]["measured"] == {"v": 1.5}
    assert doc["seed"] == 3


def test_plan_export(tmp_path):
    plan = sinkhorn(CostMatrix(entries=[[0.0, 1.0], [1.0, 0.0]]), [0.5, 0.5], [0.5, 0.5], 0.5)
    doc = read_json(save_plan_json(plan, tmp_path / "plan.json"))
    assert np.allclose(np.array(doc["gamma"]).sum(axis=1), 0.5)


def test_measure_json_roundtrip(tmp_path):
    P = uniform_measure([[0.1, 0.2], [0.3, 0.4]])
    Q = load_measure_json(save_measure_json(P, tmp_path / "m.json"))
    assert np.array_equal(P.points, Q.points)
    assert np.array_equal(P.weights, Q.weights)
