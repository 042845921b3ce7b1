import json

import numpy as np
import pytest

from peacocks._parallel import pmap
from peacocks.reports import CheckReport, Verdict, merge_reports, to_jsonable


def test_to_jsonable_handles_numpy_and_specials():
    obj = {"a": np.arange(3), "b": np.float64(np.nan), "c": np.inf, "d": -np.inf, "e": np.bool_(True),
           "f": Verdict.FAIL, 1: (np.int32(4),)}
    out = to_jsonable(obj)
    assert out == {"a": [0, 1, 2], "b": None, "c": "inf", "d": "-inf", "e": True, "f": "fail", "1": [4]}
    json.dumps(out)


def test_fail_needs_witness():
    with pytest.raises(ValueError):
        CheckReport(Verdict.FAIL, -1.0, None, 1e-10, 1)


def test_roundtrip():
    r = CheckReport("fail", -0.5, {"x": 1}, 1e-10, 7, {"note": "n"})
    back = CheckReport.from_dict(json.loads(r.to_json()))
    assert back == r and back.failed and not back.passed


def test_merge_order_and_verdicts():
    a = CheckReport(Verdict.PASS, 0.0, None, 1e-10, 3)
    b = CheckReport(Verdict.FAIL, -0.2, {"id": "b"}, 1e-10, 4)
    c = CheckReport(Verdict.FAIL, -0.2, {"id": "c"}, 1e-10, 5)
    d = CheckReport(Verdict.INCONCLUSIVE, 0.0, None, 1e-10, 1)
    m = merge_reports([a, b, c, d], 1e-10)
    assert m.failed and m.witness == {"id": "b"} and m.checks_performed == 13
    assert merge_reports([a, d], 1e-10).verdict == Verdict.INCONCLUSIVE
    assert merge_reports([a], 1e-10).passed


def test_pmap_preserves_order():
    assert pmap(lambda x: x * x, range(20), jobs=4) == [x * x for x in range(20)]
    assert pmap(lambda x: x, [], jobs=3) == []
