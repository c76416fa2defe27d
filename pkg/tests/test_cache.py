import json

import pytest

from anonbench.cache import ArtifactCache
from anonbench.util import sha256_hex

KEY_A = "a" * 64
KEY_B = "b" * 64


@pytest.fixture
def cache(tmp_path):
    return ArtifactCache(tmp_path / "cache")


def put_sample(cache, key=KEY_A, payload=b"hello"):
    files = {"blob.bin": payload, "meta.json": b"{}"}
    cache.put("stage", key, files, inputs=["f" * 64], params='{"x":1}')
    return files


class TestPutGet:
    def test_roundtrip(self, cache):
        files = put_sample(cache)
        assert cache.get("stage", KEY_A) == files

    def test_missing_returns_none(self, cache):
        assert cache.get("stage", KEY_A) is None

    def test_manifest_records_hashes_inputs_params(self, cache):
        files = put_sample(cache)
        manifest = json.loads(
            (cache.root / "stage" / KEY_A / "manifest.json").read_text()
        )
        assert manifest["kind"] == "stage"
        assert manifest["key"] == KEY_A
        assert manifest["inputs"] == ["f" * 64]
        assert manifest["params"] == '{"x":1}'
        assert manifest["files"] == {name: sha256_hex(data) for name, data in files.items()}

    def test_existing_entry_left_untouched(self, cache):
        put_sample(cache, payload=b"first")
        put_sample(cache, payload=b"second")
        assert cache.get("stage", KEY_A)["blob.bin"] == b"first"

    def test_invalid_key_rejected(self, cache):
        with pytest.raises(ValueError, match="64 hex chars"):
            cache.put("stage", "short", {"a": b""}, [], "{}")
        with pytest.raises(ValueError, match="64 hex chars"):
            cache.get("stage", "Z" * 64)

    def test_kinds_are_separate(self, cache):
        cache.put("alpha", KEY_A, {"f": b"1"}, [], "{}")
        cache.put("beta", KEY_A, {"f": b"2"}, [], "{}")
        assert cache.get("alpha", KEY_A) == {"f": b"1"}
        assert cache.get("beta", KEY_A) == {"f": b"2"}


class TestCorruption:
    def test_tampered_payload_is_a_miss_and_quarantined(self, cache):
        put_sample(cache)
        target = cache.root / "stage" / KEY_A / "blob.bin"
        target.write_bytes(b"tampered")
        assert cache.get("stage", KEY_A) is None
        assert not (cache.root / "stage" / KEY_A).exists()
        quarantined = cache.root / "quarantine" / f"stage-{KEY_A}"
        assert (quarantined / "blob.bin").read_bytes() == b"tampered"

    def test_missing_payload_file_quarantined(self, cache):
        put_sample(cache)
        (cache.root / "stage" / KEY_A / "meta.json").unlink()
        assert cache.get("stage", KEY_A) is None
        assert (cache.root / "quarantine" / f"stage-{KEY_A}").exists()

    def test_broken_manifest_quarantined(self, cache):
        put_sample(cache)
        (cache.root / "stage" / KEY_A / "manifest.json").write_text("{not json")
        assert cache.get("stage", KEY_A) is None
        assert (cache.root / "quarantine" / f"stage-{KEY_A}").exists()

    def test_requarantine_replaces_previous_quarantine(self, cache):
        put_sample(cache)
        (cache.root / "stage" / KEY_A / "blob.bin").write_bytes(b"bad1")
        assert cache.get("stage", KEY_A) is None
        put_sample(cache)
        (cache.root / "stage" / KEY_A / "blob.bin").write_bytes(b"bad2")
        assert cache.get("stage", KEY_A) is None
        quarantined = cache.root / "quarantine" / f"stage-{KEY_A}"
        assert (quarantined / "blob.bin").read_bytes() == b"bad2"


class TestMaintenance:
    def test_stats_counts_and_bytes(self, cache):
        put_sample(cache, KEY_A, payload=b"12345")
        put_sample(cache, KEY_B, payload=b"123")
        cache.put("other", KEY_A, {"x.bin": b"1"}, [], "{}")
        stats = cache.stats()
        assert stats["stage"]["count"] == 2
        assert stats["other"]["count"] == 1
        expected_stage_bytes = sum(
            f.stat().st_size
            for key in (KEY_A, KEY_B)
            for f in (cache.root / "stage" / key).iterdir()
        )
        assert stats["stage"]["bytes"] == expected_stage_bytes

    def test_verify_counts_ok_and_quarantines_bad(self, cache):
        put_sample(cache, KEY_A)
        put_sample(cache, KEY_B)
        (cache.root / "stage" / KEY_B / "blob.bin").write_bytes(b"oops")
        ok, bad = cache.verify()
        assert ok == 1
        assert bad == [("stage", KEY_B)]
        assert (cache.root / "quarantine" / f"stage-{KEY_B}").exists()
        # a second verify sees only the intact artifact
        assert cache.verify() == (1, [])

    def test_clear_removes_everything(self, cache):
        put_sample(cache)
        cache.clear()
        assert cache.get("stage", KEY_A) is None
        assert list(cache.root.iterdir()) == []

    def test_leftover_tmp_dirs_ignored(self, cache):
        put_sample(cache)
        (cache.root / "tmp-deadbeef").mkdir()
        (cache.root / "tmp-deadbeef" / "blob.bin").write_bytes(b"partial")
        stats = cache.stats()
        assert set(stats) == {"stage"}
        assert cache.verify() == (1, [])

    def test_quarantine_dir_not_treated_as_artifacts(self, cache):
        put_sample(cache)
        (cache.root / "stage" / KEY_A / "blob.bin").write_bytes(b"bad")
        assert cache.get("stage", KEY_A) is None
        stats = cache.stats()
        assert stats.get("stage", {"count": 0})["count"] == 0
        assert cache.verify() == (0, [])
