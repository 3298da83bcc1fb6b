import json
import math

import numpy as np
import pytest

from bmgrw.report import Assertion, RunReport


@pytest.mark.parametrize("op,m,t,ok", [
    ("<=", 1.0, 1.0, True), ("<", 1.0, 1.0, False), (">=", 2.0, 1.0, True),
    (">", 1.0, 1.0, False), ("==", 3.0, 3.0, True), ("<=", math.nan, 1.0, False),
    (">=", math.nan, 1.0, False),
])
def test_assertion_ops(op, m, t, ok):
    assert Assertion("a", m, t, op).passed is ok


def make(wall=0.0):
    r = RunReport("demo", scenario_hash="abc", seeds={"noise": [0, 3]})
    r.check("err", 0.01, 0.05)
    r.series("l1", [0.0, 1.0], [0.1, np.float32(0.2)])
    r.values["ks"] = np.array([0.5, 0.25])
    r.values["inf"] = float("inf")
    r.wall_clock = wall
    return r


def test_digest_ignores_wall_clock():
    assert make(1.0).digest() == make(99.0).digest()
    other = make()
    other.check("extra", 1.0, 0.5)
    assert other.digest() != make().digest()
    assert not other.passed and [a.name for a in other.failures()] == ["extra"]


def test_json_is_clean():
    doc = json.loads(make().to_json())
    assert doc["values"]["ks"] == [0.5, 0.25]
    assert doc["values"]["inf"] == "inf"
    assert doc["assertions"][0]["passed"] is True


def test_merge_prefixes():
    total = RunReport("all")
    total.merge(make(2.0), prefix="c1/")
    total.merge(make(3.0), prefix="c2/")
    assert [a.name for a in total.assertions] == ["c1/err", "c2/err"]
    assert set(total.metrics) == {"c1/l1", "c2/l1"}
    assert total.wall_clock == 5.0
    assert total.seeds["c2/noise"] == [0, 3]


def test_write_layout(tmp_path):
    r = make(1.5)
    r.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["digest"] == r.digest()
    assert "wall_clock" not in json.dumps(doc)
    assert json.loads((tmp_path / "timing.json").read_text()) == {"wall_clock_s": 1.5}
    assert (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "plots" / "l1.svg").exists()
    summary = r.failure_summary()
    assert summary["failed"] == [] and summary["digest"] == r.digest()
