"""Content-addressed artifact store with atomic writes and manifest verification.

Layout: ``<root>/<stage-kind>/<key>/`` holds the payload files plus a
``manifest.json`` recording the stage kind, key, input fingerprints, the
canonical parameter text and a SHA-256 per payload file. Writers stage into a
temporary directory and rename it into place, so interrupted writes never
produce a readable artifact. Corrupt artifacts (hash mismatch, missing files,
broken manifest) are moved to ``<root>/quarantine/`` and treated as misses.
"""

from __future__ import annotations

import json
import re
import shutil
import uuid
from pathlib import Path

from .util import sha256_hex

MANIFEST = "manifest.json"
_KEY_RE = re.compile(r"[0-9a-f]{64}")
_RESERVED = {"quarantine"}


class ArtifactCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _check_key(self, key: str) -> str:
        if not _KEY_RE.fullmatch(key):
            raise ValueError(f"cache key must be 64 hex chars, got {key!r}")
        return key

    def _dir(self, kind: str, key: str) -> Path:
        return self.root / kind / self._check_key(key)

    def put(self, kind: str, key: str, files: dict[str, bytes], inputs, params: str) -> None:
        """Store an artifact atomically; an existing entry is left untouched."""
        final = self._dir(kind, key)
        if final.exists():
            return
        manifest = {
            "kind": kind,
            "key": key,
            "inputs": list(inputs),
            "params": params,
            "files": {name: sha256_hex(data) for name, data in files.items()},
        }
        tmp = self.root / f"tmp-{uuid.uuid4().hex}"
        tmp.mkdir()
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        (tmp / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1))
        final.parent.mkdir(parents=True, exist_ok=True)
        try:
            tmp.rename(final)
        except OSError:
            # A concurrent writer won the race; identical content either way.
            shutil.rmtree(tmp, ignore_errors=True)

    def get(self, kind: str, key: str) -> dict[str, bytes] | None:
        """Fetch an artifact's payload files, verifying them against the manifest."""
        folder = self._dir(kind, key)
        manifest_path = folder / MANIFEST
        if not manifest_path.is_file():
            return None
        try:
            manifest = json.loads(manifest_path.read_text())
            files = {}
            for name, expected in manifest["files"].items():
                data = (folder / name).read_bytes()
                if sha256_hex(data) != expected:
                    raise ValueError(f"hash mismatch for {name}")
                files[name] = data
        except (OSError, ValueError, KeyError, json.JSONDecodeError):
            self._quarantine(kind, key)
            return None
        return files

    def _quarantine(self, kind: str, key: str) -> None:
        folder = self.root / kind / key
        dest_dir = self.root / "quarantine"
        dest_dir.mkdir(exist_ok=True)
        dest = dest_dir / f"{kind}-{key}"
        if dest.exists():
            shutil.rmtree(dest)
        shutil.move(str(folder), str(dest))

    def _artifact_dirs(self):
        for kind_dir in sorted(self.root.iterdir()):
            if not kind_dir.is_dir() or kind_dir.name in _RESERVED:
                continue
            if kind_dir.name.startswith("tmp-"):
                continue
            for entry in sorted(kind_dir.iterdir()):
                if entry.is_dir() and _KEY_RE.fullmatch(entry.name):
                    yield kind_dir.name, entry

    def stats(self) -> dict[str, dict[str, int]]:
        """Artifact count and payload bytes per stage kind."""
        out: dict[str, dict[str, int]] = {}
        for kind, folder in self._artifact_dirs():
            entry = out.setdefault(kind, {"count": 0, "bytes": 0})
            entry["count"] += 1
            entry["bytes"] += sum(f.stat().st_size for f in folder.iterdir() if f.is_file())
        return out

    def verify(self) -> tuple[int, list[tuple[str, str]]]:
        """Re-hash every artifact; quarantine mismatches. Returns (ok, quarantined)."""
        ok = 0
        bad: list[tuple[str, str]] = []
        for kind, folder in list(self._artifact_dirs()):
            key = folder.name
            if self.get(kind, key) is None:
                bad.append((kind, key))
            else:
                ok += 1
        return ok, bad

    def clear(self) -> None:
        for child in self.root.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
