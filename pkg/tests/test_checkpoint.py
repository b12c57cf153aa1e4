"""Checkpoint round trips, integrity failures, and atomic writes.

Round trips must be bit-identical (including -0.0 and denormals), so
parameter equality is compared on raw bytes. Corruption cases distinguish
the three failure classes: wrong format/version/dtype, checksum mismatch,
and structural truncation.
"""

import json
import os

import numpy as np
import pytest

from semlab import checkpoint, ensemble, nets
from semlab.rng import stream


def _special_model():
    arch = nets.default_zoo(3)[0]  # linear
    model = nets.build_model(arch, seed=3)
    params = [p.copy() for p in model.params]
    flat = params[0].ravel()
    flat[:6] = [0.0, -0.0, np.pi, 5e-324, -1e300, 1e-16]
    return nets.Model(arch, tuple(params),
                      {"seed": 3, "clean_accuracy": 0.875, "note": "x"})


def _bits_equal(a, b):
    return a.tobytes() == b.tobytes() and a.shape == b.shape


def test_model_round_trip_bit_identical(tmp_path):
    path = str(tmp_path / "m.ckpt")
    for model in (_special_model(),
                  nets.build_model(nets.default_zoo(4)[4], seed=7)):
        checkpoint.save_checkpoint(model, path)
        loaded = checkpoint.load_checkpoint(path)
        assert loaded.arch == model.arch
        assert len(loaded.params) == len(model.params)
        for a, b in zip(model.params, loaded.params):
            assert _bits_equal(a, b)
    assert loaded.train_meta == {"seed": 7}


def test_meta_survives_numpy_scalars(tmp_path):
    arch = nets.default_zoo(3)[0]
    model = nets.Model(arch, nets.build_model(arch, 1).params,
                       {"acc": np.float64(0.5), "n": np.int64(7),
                        "clean_accuracy": 0.5})
    path = str(tmp_path / "m.ckpt")
    checkpoint.save_checkpoint(model, path)
    meta = checkpoint.load_checkpoint(path).train_meta
    assert meta["acc"] == 0.5 and meta["n"] == 7
    assert isinstance(meta["n"], int)


def _reseal_tampered(path, mutate):
    with open(path) as handle:
        body = json.load(handle)
    body.pop("checksum")
    mutate(body)
    checkpoint.atomic_write_text(path, checkpoint._seal(body))


def test_version_errors(tmp_path):
    path = str(tmp_path / "m.ckpt")
    checkpoint.save_checkpoint(_special_model(), path)
    _reseal_tampered(path, lambda b: b.update(version=2))
    with pytest.raises(checkpoint.CheckpointVersionError):
        checkpoint.load_checkpoint(path)
    checkpoint.save_checkpoint(_special_model(), path)
    _reseal_tampered(path, lambda b: b.update(format="other-tool"))
    with pytest.raises(checkpoint.CheckpointVersionError):
        checkpoint.load_checkpoint(path)
    checkpoint.save_checkpoint(_special_model(), path)
    _reseal_tampered(path, lambda b: b["params"].update(dtype=">f8"))
    with pytest.raises(checkpoint.CheckpointVersionError):
        checkpoint.load_checkpoint(path)


def test_checksum_error_on_silent_edit(tmp_path):
    path = str(tmp_path / "m.ckpt")
    checkpoint.save_checkpoint(_special_model(), path)
    with open(path) as handle:
        body = json.load(handle)
    blob = body["params"]["blob"]
    body["params"]["blob"] = ("A" if blob[0] != "A" else "B") + blob[1:]
    with open(path, "w") as handle:
        json.dump(body, handle)  # keeps the stale checksum
    with pytest.raises(checkpoint.CheckpointChecksumError):
        checkpoint.load_checkpoint(path)


def test_truncation_errors(tmp_path):
    path = str(tmp_path / "m.ckpt")
    checkpoint.save_checkpoint(_special_model(), path)
    text = open(path).read()
    open(path, "w").write(text[: len(text) // 2])
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)
    open(path, "w").write("")
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)
    open(path, "w").write("[1,2,3]")
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)
    # valid version header but no checksum field
    checkpoint.save_checkpoint(_special_model(), path)
    with open(path) as handle:
        body = json.load(handle)
    body.pop("checksum")
    open(path, "w").write(json.dumps(body))
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)
    # blob shorter than the shapes demand, checksum made consistent
    checkpoint.save_checkpoint(_special_model(), path)
    _reseal_tampered(
        path, lambda b: b["params"].update(blob=b["params"]["blob"][:-8])
    )
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)
    # undecodable base64
    checkpoint.save_checkpoint(_special_model(), path)
    _reseal_tampered(path, lambda b: b["params"].update(blob="@@@not64@@@"))
    with pytest.raises(checkpoint.CheckpointTruncatedError):
        checkpoint.load_checkpoint(path)


def test_error_hierarchy():
    for cls in (checkpoint.CheckpointVersionError,
                checkpoint.CheckpointChecksumError,
                checkpoint.CheckpointTruncatedError):
        assert issubclass(cls, checkpoint.CheckpointError)


def test_atomic_write_failure_leaves_target_intact(tmp_path):
    path = str(tmp_path / "out.json")
    checkpoint.atomic_write_text(path, "first")
    with pytest.raises(TypeError):
        checkpoint.atomic_write_text(path, 12345)
    assert open(path).read() == "first"
    leftovers = [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]
    assert leftovers == []


def _toy_collection():
    rng = stream(801, "test", "coll")
    entries, plains = [], {}
    for aid, aca, unsmooth in (("a", 0.8, False), ("b", float("nan"), False)):
        model = nets.linear_model(rng.normal(size=(2, 4)), rng.normal(size=2),
                                  (4,), arch_id=aid,
                                  meta={"clean_accuracy": 0.9})
        plains[aid] = model
        entries.append(ensemble.CollectionEntry(
            f"{aid}:s0.25", aid, 0.25, model, aca, unsmooth
        ))
    fallback = nets.linear_model(rng.normal(size=(2, 4)), np.zeros(2), (4,),
                                 arch_id="c", meta={"clean_accuracy": 0.4})
    plains["c"] = fallback
    entries.append(ensemble.CollectionEntry(
        "c:plain", "c", 0.0, fallback, 0.35, True
    ))
    return ensemble.ModelCollection(tuple(entries), (1, 2), plains)


def test_collection_round_trip(tmp_path):
    coll = _toy_collection()
    directory = str(tmp_path / "coll")
    manifest = checkpoint.save_collection(coll, directory)
    assert os.path.basename(manifest) == "collection.json"
    files = sorted(os.listdir(directory))
    assert "entry-a_s0.25.ckpt" in files
    assert "entry-c_plain.ckpt" in files
    assert "plain-b.ckpt" in files
    loaded = checkpoint.load_collection(directory)
    assert loaded.quantity_options == coll.quantity_options
    assert set(loaded.plain_models) == set(coll.plain_models)
    for got, want in zip(loaded.entries, coll.entries):
        assert got.entry_id == want.entry_id
        assert got.sigma == want.sigma
        assert got.unsmoothable == want.unsmoothable
        assert (np.isnan(got.aca) and np.isnan(want.aca)) or got.aca == want.aca
        for a, b in zip(got.model.params, want.model.params):
            assert _bits_equal(a, b)


def test_collection_error_paths(tmp_path):
    coll = _toy_collection()
    directory = str(tmp_path / "coll")
    manifest = checkpoint.save_collection(coll, directory)
    text = open(manifest).read()
    open(manifest, "w").write(text.replace('"quantity_options":[1,2]',
                                           '"quantity_options":[1,3]'))
    with pytest.raises(checkpoint.CheckpointChecksumError):
        checkpoint.load_collection(directory)
    checkpoint.save_collection(coll, directory)
    os.unlink(os.path.join(directory, "entry-a_s0.25.ckpt"))
    with pytest.raises(FileNotFoundError):
        checkpoint.load_collection(directory)
    with pytest.raises(FileNotFoundError):
        checkpoint.load_collection(str(tmp_path / "nowhere"))
