"""
Content hashing, seed derivation and output-path validation
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Union

from utils.error_handler import OutputPathError


class ContentHasher:
    """Stable digests for configs, files and derived seeds"""

    DIGEST_PREFIX_LENGTH = 12

    @classmethod
    def canonical_json(cls, payload: Any) -> str:
        """Serialize with sorted keys and compact separators"""
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def digest(cls, data: Union[str, bytes]) -> str:
        """SHA-256 hex digest of text or bytes"""
        if isinstance(data, str):
            data = data.encode("utf-8")
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def payload_hash(cls, payload: Any) -> str:
        """Digest of the canonical JSON form of a payload"""
        return cls.digest(cls.canonical_json(payload))

    @classmethod
    def short(cls, digest: str) -> str:
        return digest[:cls.DIGEST_PREFIX_LENGTH]

    @classmethod
    def file_digest(cls, path: Union[str, Path]) -> str:
        """SHA-256 of a file's bytes, streamed"""
        sha = hashlib.sha256()
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                sha.update(chunk)
        return sha.hexdigest()

    @classmethod
    def derive_seed(cls, *parts: Any) -> int:
        """Deterministic 63-bit seed from an ordered tuple of keys"""
        text = "\x1f".join(str(part) for part in parts)
        return int(cls.digest(text)[:16], 16) & ((1 << 63) - 1)


def validate_output_dir(folder_path: Union[str, Path]) -> Path:
    """Create the directory if needed and check it is writable"""
    if not str(folder_path):
        raise OutputPathError("No output directory provided")

    path = Path(os.path.normpath(str(folder_path)))
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputPathError(f"Cannot create output directory {path}: {e}", details={"path": str(path)})

    if not path.is_dir():
        raise OutputPathError(f"Path is not a directory: {path}", details={"path": str(path)})
    if not os.access(path, os.W_OK):
        raise OutputPathError(f"No write permission for directory: {path}", details={"path": str(path)})
    return path
