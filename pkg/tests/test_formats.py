import numpy as np
import pytest

from app.exceptions import ArtifactFormatError
from app.formats import (
    decode_fingerprint,
    decode_manifest,
    decode_matrix,
    decode_model,
    decode_refset,
    encode_fingerprint,
    encode_manifest,
    encode_matrix,
    encode_model,
    encode_refset,
    encode_roc,
    encode_rows,
    load_fingerprint,
    read_config_hash,
    save_fingerprint,
    save_model,
)
from app.gif_engine import BaselineMode, GiFCurveSet, QuadratureRule, Scalarization, fingerprint
from app.model_zoo import ArchSpec, LineageKind, ZooEntry, ZooManifest
from app.reference_sampler import SamplerKind, sample_given
from app.tensor_core import evaluate_batch
from tests.conftest import tanh_mlp


def _curve_set(count=16, steps=64, dim=256, model_id="m") -> GiFCurveSet:
    rng = np.random.default_rng(0)
    return GiFCurveSet(model_id, rng.normal(size=(count, steps, dim)), refset_hash=0xABCDEF,
                       baseline_mode=BaselineMode.ZERO, baseline_seed=0, rule=QuadratureRule.MIDPOINT,
                       scalarization=Scalarization.LOGITS, baselines=np.zeros((count, dim)))


def test_fingerprint_file_layout():
    blob = encode_fingerprint(_curve_set(), cfg_hash=0x1234)
    assert len(blob) == 14 + 39 + 16 * 64 * 256 * 4 + 4
    assert blob[:4] == b"MGIF"


def test_fingerprint_restores_curves_and_metadata():
    original = _curve_set(count=3, steps=8, dim=5)
    restored, cfg_hash = decode_fingerprint(encode_fingerprint(original, 77), "m")
    assert cfg_hash == 77
    np.testing.assert_array_equal(restored.curves, original.curves.astype(np.float32))
    assert (restored.refset_hash, restored.rule, restored.scalarization) == (
        original.refset_hash, original.rule, original.scalarization)
    assert restored.endpoints is None
    with pytest.raises(ArtifactFormatError):
        decode_fingerprint(encode_fingerprint(original), "someone-else")


def test_fingerprint_reattaches_its_reference_set(rng):
    refs = sample_given(rng.uniform(0, 1, size=(4, 4)))
    fp = fingerprint(tanh_mlp(0), refs, BaselineMode.RANDOM, steps=8, seed=3, model_id="m")
    restored, _ = decode_fingerprint(encode_fingerprint(fp), "m", refs)
    np.testing.assert_array_equal(restored.baselines, fp.baselines)
    np.testing.assert_array_equal(restored.endpoints, fp.endpoints)
    np.testing.assert_allclose(restored.attributions(), fp.attributions(), rtol=1e-6)


def test_corrupted_files_are_rejected():
    blob = bytearray(encode_fingerprint(_curve_set(count=2, steps=4, dim=3)))
    blob[40] ^= 0xFF
    with pytest.raises(ArtifactFormatError, match="CRC32"):
        decode_fingerprint(bytes(blob), "m")
    with pytest.raises(ArtifactFormatError):
        decode_fingerprint(b"MG", "m")


def test_bad_magic_is_rejected():
    model_blob = encode_model(tanh_mlp(0))
    with pytest.raises(ArtifactFormatError, match="magic"):
        decode_fingerprint(model_blob, "m")


def test_checkpoint_preserves_the_model(rng):
    model = ArchSpec(kind="cnn", input_shape=(8, 8, 1), hidden=(6,), outputs=3, channels=2).build(1)
    restored, cfg_hash = decode_model(encode_model(model, 5))
    assert cfg_hash == 5
    assert [layer.kind for layer in restored.layers] == [layer.kind for layer in model.layers]
    batch = rng.uniform(0, 1, size=(3, 8, 8, 1))
    np.testing.assert_array_equal(evaluate_batch(restored, batch), evaluate_batch(model, batch))


def test_reference_set_keeps_its_shape_and_hash(rng):
    refs = sample_given(rng.uniform(0, 1, size=(5, 4, 4, 2)), seed=8)
    restored, _ = decode_refset(encode_refset(refs, 1))
    assert restored.input_shape == (4, 4, 2)
    assert restored.kind == SamplerKind.GIVEN and restored.seed == 8
    assert restored.refset_hash == refs.refset_hash


def test_matrix_csv():
    text = encode_matrix(["a", "b"], np.array([[0.0, 1.0 / 3.0], [1.0 / 3.0, 0.0]]), cfg_hash=0xFF)
    lines = text.splitlines()
    assert lines[0] == "# config_hash=00000000000000ff"
    assert lines[1] == "model,a,b"
    assert lines[2] == "a,0,0.333333333"
    ids, values, cfg_hash = decode_matrix(text)
    assert ids == ["a", "b"] and cfg_hash == 0xFF
    assert values[0, 1] == pytest.approx(1.0 / 3.0, rel=1e-8)
    with pytest.raises(ArtifactFormatError):
        decode_matrix("model,a\na,0\n")


def test_manifest_text():
    manifest = ZooManifest()
    manifest.add(ZooEntry("victim", LineageKind.VICTIM, None, 11, 0x10))
    manifest.add(ZooEntry("pruned-0", LineageKind.PRUNED, "victim", 12, 0x20))
    text = encode_manifest(manifest, 3)
    assert "id=pruned-0 kind=pruned parent=victim seed=12 config_hash=0000000000000020" in text
    decoded, cfg_hash = decode_manifest(text)
    assert cfg_hash == 3
    assert decoded.entries == manifest.entries
    with pytest.raises(ArtifactFormatError):
        decode_manifest("# config_hash=0\nid=x kind=mystery parent=- seed=1 config_hash=0\n")


def test_tables_use_nine_significant_digits():
    roc = encode_roc({"pruned": [(0.0, 0.5), (1.0, 1.0)]})
    assert roc.splitlines()[1:] == ["family,fpr,tpr", "pruned,0,0.5", "pruned,1,1"]
    rows = encode_rows(["id", "score"], [["a", 2.0 / 3.0], ["b", 7]])
    assert rows.splitlines()[2:] == ["a,0.666666667", "b,7"]


def test_config_hash_of_any_artifact(tmp_path):
    model_path = save_model(tmp_path / "m.mgmd", tanh_mlp(0), cfg_hash=0xBEEF)
    fp_path = save_fingerprint(tmp_path / "m.mgif", _curve_set(count=1, steps=2, dim=2), cfg_hash=0xCAFE)
    csv_path = tmp_path / "d.csv"
    csv_path.write_text(encode_matrix(["a"], np.zeros((1, 1)), cfg_hash=0xF00D))
    assert read_config_hash(model_path) == 0xBEEF
    assert read_config_hash(fp_path) == 0xCAFE
    assert read_config_hash(csv_path) == 0xF00D
    restored, _ = load_fingerprint(fp_path, "m")
    assert restored.count == 1
