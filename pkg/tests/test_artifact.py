import numpy as np
import pytest

from tdrom.artifact import OfflineArtifact, config_hash, from_bytes, load_artifact, save_artifact, to_bytes
from tdrom.estimator import evaluate_rom
from tdrom.exceptions import ConfigurationError
from tdrom.greedy import pod_greedy, t_greedy

CFG = {"benchmark": {"case": 2}, "greedy": {"eps": 1e-6}, "list": [1, 2.5, "x"]}


@pytest.fixture(scope="module")
def results(advdiff, burgers):
    model, _, dom = advdiff
    d = dom.with_training_set([[0.1, 0.2], [-0.6, 0.7], [0.8, -0.9], [0.0, 0.0]])
    bm, _, bdom = burgers
    bd = bdom.with_training_set([[0.01], [0.04]])
    return {
        "mtd": (model, t_greedy(model, d, 1e-14, r_max=3)),
        "mti": (model, pod_greedy(model, d, 1e-14, r_max=3)),
        "nonlinear": (bm, t_greedy(bm, bd, 1e-14, r_max=2)),
        "empty": (model, t_greedy(model, d, np.inf)),
    }


@pytest.mark.parametrize("kind", ["mtd", "mti", "nonlinear", "empty"])
def test_byte_exact_round_trip(kind, results, tmp_path):
    _, res = results[kind]
    art = OfflineArtifact(CFG, res)
    blob = to_bytes(art)
    again = from_bytes(blob)
    assert to_bytes(again) == blob
    p = save_artifact(tmp_path / "a.tdrom", art)
    loaded = load_artifact(p, expected_hash=config_hash(CFG))
    assert to_bytes(loaded) == blob
    assert loaded.config == CFG
    assert loaded.result.selected_indices == res.selected_indices


@pytest.mark.parametrize("kind", ["mtd", "mti", "nonlinear"])
def test_loaded_model_reproduces_online_output(kind, results):
    model, res = results[kind]
    loaded = from_bytes(to_bytes(OfflineArtifact(CFG, res))).result
    pts = [[0.3, -0.1]] if not model.nonlinear else [[0.025]]
    t1, e1 = evaluate_rom(res.offline, model, pts, basis=res.basis)
    t2, e2 = evaluate_rom(loaded.offline, model, pts, basis=loaded.basis)
    np.testing.assert_array_equal(t1.alpha, t2.alpha)
    np.testing.assert_array_equal(e1.delta, e2.delta)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_hash_mismatch_is_refused(results, tmp_path):
    p = save_artifact(tmp_path / "a.tdrom", OfflineArtifact(CFG, results["mtd"][1]))
    with pytest.raises(ConfigurationError):
        load_artifact(p, expected_hash=config_hash({"other": 1}))


def test_corrupt_input_is_refused(results):
    blob = to_bytes(OfflineArtifact(CFG, results["mtd"][1]))
    with pytest.raises(ConfigurationError):
        from_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(ConfigurationError):
        from_bytes(blob[:-8])
    with pytest.raises(ConfigurationError):
        from_bytes(blob + b"\0")
    with pytest.raises(ConfigurationError):
        from_bytes(blob[:10])
    tampered = blob.replace(b'"eps":1e-06', b'"eps":2e-06', 1)
    assert tampered != blob
    with pytest.raises(ConfigurationError):
        from_bytes(tampered)


def test_atomic_write_leaves_no_temporaries(results, tmp_path):
    save_artifact(tmp_path / "a.tdrom", OfflineArtifact(CFG, results["mti"][1]))
    save_artifact(tmp_path / "a.tdrom", OfflineArtifact(CFG, results["mti"][1]))
    assert [p.name for p in tmp_path.iterdir()] == ["a.tdrom"]
