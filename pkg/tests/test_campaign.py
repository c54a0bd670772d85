import json

import numpy as np
import pytest

from mll.campaign import (
    DEFAULT_TOLERANCES,
    VERIFIERS,
    generate_instance,
    run_campaign,
    run_instance,
    trial_rng,
    write_witnesses,
)


def test_trial_rng_independent_streams():
    a = trial_rng(1, 0, 0).random(4)
    np.testing.assert_array_equal(a, trial_rng(1, 0, 0).random(4))
    assert not np.array_equal(a, trial_rng(1, 0, 1).random(4))
    assert not np.array_equal(a, trial_rng(1, 1, 0).random(4))


@pytest.mark.parametrize("verifier", VERIFIERS)
def test_instances_are_json_and_replayable(verifier):
    inst = generate_instance(verifier, 3, 7)
    again = json.loads(json.dumps(inst))
    assert again == inst and inst["verifier"] == verifier
    a = [c.as_dict() for c in run_instance(inst)]
    b = [c.as_dict() for c in run_instance(again)]
    assert a == b


def test_run_instance_unknown():
    with pytest.raises(ValueError):
        run_instance({"verifier": "nope"})


def test_campaign_deterministic_and_parallel_equal():
    kw = dict(verifiers=["tightness_chain", "ce_pce_bound"], trials=40, seed=9)
    a = run_campaign(**kw)
    b = run_campaign(**kw)
    c = run_campaign(**kw, jobs=2)
    for v in kw["verifiers"]:
        assert a[v].as_dict() == b[v].as_dict() == c[v].as_dict()
        assert a[v].witnesses == c[v].witnesses


def test_clean_verifiers_have_no_violations():
    clean = [v for v in VERIFIERS if v != "ce_pce_bound"]
    for s in run_campaign(clean, trials=50, seed=1).values():
        assert s.violations == 0 and s.passes + s.skips == 50
        assert s.worst_slack >= 0


def test_zero_tolerance_breaks_equalities():
    s = run_campaign(["mi_views"], trials=50, seed=1, tolerance=0.0)["mi_views"]
    assert s.tolerance == 0.0
    assert s.violations > 0


def test_tolerance_dict_override():
    s = run_campaign(["hinge_approximation", "mi_views"], trials=2,
                     tolerance={"mi_views": 0.5})
    assert s["mi_views"].tolerance == 0.5
    assert s["hinge_approximation"].tolerance == DEFAULT_TOLERANCES["hinge_approximation"]


def test_campaign_argument_errors():
    with pytest.raises(ValueError):
        run_campaign([], trials=1)
    with pytest.raises(ValueError):
        run_campaign(["bogus"], trials=1)
    with pytest.raises(ValueError):
        run_campaign(trials=0)


def test_witnesses_written_and_replay(tmp_path):
    s = run_campaign(["ce_pce_bound"], trials=30, seed=42)
    assert s["ce_pce_bound"].violations > 0
    paths = write_witnesses(s, tmp_path / "w")
    assert len(paths) == len(s["ce_pce_bound"].witnesses)
    w = json.loads(open(paths[0]).read())
    assert paths[0].endswith(f"ce_pce_bound_{w['trial']:05d}.json")
    checks = run_instance(w)
    assert [c.name for c in checks if not c.holds] == [f["name"] for f in w["failed_checks"]]


def test_summary_dict_fields():
    d = run_campaign(["lemma2_identity"], trials=3)["lemma2_identity"].as_dict()
    assert {"trials", "passes", "violations", "skips", "skip_rate",
            "worst_slack", "worst_check", "witness_count"} <= set(d)
    assert d["skip_rate"] == 0.0
