import json

import numpy as np
import pytest

from pestalk import esmm
from pestalk.errors import EmptyLibrary, EmptySpeaker, FormatError, MissingBase, ZeroVector


def random_library(rng, K=3, C=4):
    base = {f"s{k}": rng.normal(size=512) for k in range(K)}
    lib = esmm.StyleLibrary(base)
    for s in base:
        for c in range(C):
            for _ in range(2):
                lib.add(s, f"e{c}", rng.normal(size=256))
    return lib


def test_cosine_distance():
    assert esmm.cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    assert esmm.cosine_distance([1, 0], [-2, 0]) == pytest.approx(2.0)
    with pytest.raises(ZeroVector):
        esmm.cosine_distance([0, 0], [1, 0])


def test_base_styles_are_means():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 512))
    base = esmm.build_base_styles({"a": list(v)})
    np.testing.assert_allclose(base["a"], v.mean(axis=0))
    with pytest.raises(EmptySpeaker):
        esmm.build_base_styles({"a": []})


def test_incremental_equals_batch():
    rng = np.random.default_rng(1)
    base = {"a": rng.normal(size=512), "b": rng.normal(size=512)}
    feats = [(s, e, rng.normal(size=(rng.integers(3, 9), 256))) for s in "ab" for e in ("x", "y") for _ in range(3)]
    batch = esmm.build_style_library(feats, base)
    inc = esmm.StyleLibrary(base)
    for f in feats:
        esmm.build_style_library([f], base, library=inc)
    assert batch.keys == inc.keys
    for k in batch.keys:
        np.testing.assert_allclose(batch.entry(*k), inc.entry(*k), atol=1e-12)
        rows = np.stack([f[2].mean(axis=0) for f in feats if (f[0], f[1]) == k])
        np.testing.assert_allclose(batch.emotion_mean(*k), rows.mean(axis=0), atol=1e-12)


def test_entry_layout():
    rng = np.random.default_rng(2)
    lib = random_library(rng, K=1, C=1)
    P = lib.entry("s0", "e0")
    assert P.shape == (768,)
    np.testing.assert_array_equal(P[:512], lib.base_styles["s0"])


def test_missing_base_and_empty():
    lib = esmm.StyleLibrary({})
    with pytest.raises(MissingBase):
        lib.add("nobody", "x", np.zeros(256))
    with pytest.raises(EmptyLibrary):
        esmm.retrieve_style(np.ones(256), np.ones(512), lib)


def test_retrieve_scan_oracle():
    rng = np.random.default_rng(3)
    lib = random_library(rng)
    for _ in range(20):
        E, R = rng.normal(size=256), rng.normal(size=512)
        got = esmm.retrieve_style(E, R, lib)
        q = np.concatenate([R, E])
        best, best_d = None, np.inf
        for key in lib.keys:
            d = esmm.cosine_distance(q, lib.entry(*key))
            if d < best_d:
                best, best_d = key, d
        assert got.key == best
        assert got.distance == pytest.approx(best_d, abs=1e-12)


def test_retrieve_exact_entry_and_tie_break():
    rng = np.random.default_rng(4)
    base = {"b": np.ones(512), "a": np.ones(512)}
    lib = esmm.StyleLibrary(base)
    e = rng.normal(size=256)
    lib.add("b", "x", e)
    lib.add("a", "x", e)
    got = esmm.retrieve_style(e, np.ones(512), lib)
    assert got.key == ("a", "x")
    assert got.distance == pytest.approx(0.0, abs=1e-12)


def test_retrieve_applies_projection():
    rng = np.random.default_rng(5)
    lib = random_library(rng, K=2, C=2)
    got = esmm.retrieve_style(rng.normal(size=256), rng.normal(size=512), lib, projection=lambda s: s[:4] * 2)
    np.testing.assert_array_equal(got.projected, got.S[:4] * 2)


def test_persist_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    lib = random_library(rng)
    esmm.persist_library(lib, tmp_path / "lib.json")
    back = esmm.load_library(tmp_path / "lib.json")
    assert back == lib


def test_load_reports_byte_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_bytes(b'{"version": 1, "speakers": {,}}')
    with pytest.raises(FormatError) as info:
        esmm.load_library(p)
    assert info.value.offset == 28


def test_load_version_mismatch(tmp_path):
    p = tmp_path / "v.json"
    p.write_text(json.dumps({"version": 99, "speakers": {}}))
    with pytest.raises(FormatError, match="expected 1, found 99"):
        esmm.load_library(p)
