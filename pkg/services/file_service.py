import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image

from engines.isp import RGBImage
from engines.sensor import RawImage
from engines.spectral import SpectralImage, read_sif, write_sif
from generators.scene_generator import SceneManifest
from utils.error_handler import ErrorHandler, FormatError, TwinError

PathLike = Union[str, Path]

CSV_FLOAT_FORMAT = "%.17g"
SIDECAR_SUFFIX = ".json"


class FileService:
    """Service for reading and writing every on-disk artifact format"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def _guard(self, action, path: PathLike):
        try:
            return action()
        except TwinError:
            raise
        except (OSError, UnicodeDecodeError) as e:
            raise ErrorHandler.handle_file_system_error(e, str(path))

    @staticmethod
    def sidecar_path(path: PathLike) -> Path:
        path = Path(path)
        return path.with_name(path.name + SIDECAR_SUFFIX)

    @staticmethod
    def _ensure_parent(path: PathLike):
        Path(path).parent.mkdir(parents=True, exist_ok=True)

    # JSON

    @staticmethod
    def dumps_json(payload: Any) -> str:
        """Stable text form: sorted keys, two-space indent, trailing newline"""
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write_json(self, payload: Any, path: PathLike):
        """Write JSON through a temporary file so readers never see a partial document"""
        def write():
            self._ensure_parent(path)
            tmp = Path(f"{path}.tmp")
            tmp.write_text(self.dumps_json(payload), encoding="utf-8")
            os.replace(tmp, path)
        self._guard(write, path)

    def read_json(self, path: PathLike) -> Any:
        def read():
            try:
                return json.loads(Path(path).read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise FormatError(f"Invalid JSON in {path}: {e}", details={"path": str(path)})
        return self._guard(read, path)

    # Spectral images

    def write_spectral_image(self, image: SpectralImage, path: PathLike):
        self._guard(lambda: (self._ensure_parent(path), write_sif(image, path)), path)

    def read_spectral_image(self, path: PathLike) -> SpectralImage:
        return self._guard(lambda: read_sif(path), path)

    # Manifests

    def write_manifest(self, manifest: SceneManifest, path: PathLike):
        def write():
            self._ensure_parent(path)
            Path(path).write_text(manifest.to_json(), encoding="utf-8")
        self._guard(write, path)
        self.logger.info(f"Wrote manifest for '{manifest.collection}' ({len(manifest.scenes)} scenes) to {path}")

    def read_manifest(self, path: PathLike) -> SceneManifest:
        return self._guard(lambda: SceneManifest.from_json(Path(path).read_text(encoding="utf-8")), path)

    # Raw frames: 16-bit little-endian PGM plus JSON sidecar

    def write_raw(self, raw: RawImage, path: PathLike):
        """P5 with maxval 2^bits - 1 and little-endian samples"""
        maxval = 2 ** raw.bit_depth - 1
        header = f"P5\n{raw.width} {raw.height}\n{maxval}\n".encode("ascii")
        payload = np.ascontiguousarray(raw.dn, dtype="<u2").tobytes()

        def write():
            self._ensure_parent(path)
            Path(path).write_bytes(header + payload)
        self._guard(write, path)
        self.write_json(raw.sidecar(), self.sidecar_path(path))

    def read_raw(self, path: PathLike) -> RawImage:
        data = self._guard(lambda: Path(path).read_bytes(), path)
        width, height, maxval, offset = self._parse_pgm_header(data, path)
        expected = width * height * 2
        if len(data) - offset != expected:
            raise FormatError(f"PGM payload of {path} is {len(data) - offset} bytes, expected {expected}")
        dn = np.frombuffer(data, dtype="<u2", offset=offset).reshape(height, width)

        meta = self.read_json(self.sidecar_path(path))
        try:
            if 2 ** int(meta["bit_depth"]) - 1 != maxval:
                raise FormatError(f"PGM maxval {maxval} disagrees with sidecar bit depth {meta['bit_depth']}")
            return RawImage(dn, meta["cfa"], int(meta["bit_depth"]), int(meta["black_level"]),
                            float(meta["exposure_time_s"]), float(meta["saturated_fraction"]),
                            tuple(meta.get("origin", (0, 0))))
        except KeyError as e:
            raise FormatError(f"Raw sidecar for {path} lacks {e}")

    @staticmethod
    def _parse_pgm_header(data: bytes, path: PathLike) -> Tuple[int, int, int, int]:
        fields = []
        pos = 0
        while len(fields) < 4:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                pos = data.find(b"\n", pos) + 1 or len(data)
                continue
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            if start == pos:
                raise FormatError(f"Truncated PGM header in {path}")
            fields.append(data[start:pos])
        if fields[0] != b"P5":
            raise FormatError(f"{path} is not a binary PGM")
        try:
            width, height, maxval = (int(v) for v in fields[1:])
        except ValueError:
            raise FormatError(f"Malformed PGM header in {path}")
        return width, height, maxval, pos + 1

    # Display images: PNG plus JSON sidecar

    def write_rgb(self, image: RGBImage, path: PathLike):
        def write():
            self._ensure_parent(path)
            Image.fromarray(np.ascontiguousarray(image.rgb)).save(path, format="PNG")
        self._guard(write, path)
        sidecar = dict(image.metadata)
        sidecar["origin"] = [int(image.origin[0]), int(image.origin[1])]
        self.write_json(sidecar, self.sidecar_path(path))

    def read_rgb(self, path: PathLike) -> RGBImage:
        def read():
            with Image.open(path) as png:
                return np.asarray(png.convert("RGB"))
        rgb = self._guard(read, path)
        meta: Dict[str, Any] = {}
        if self.sidecar_path(path).exists():
            meta = self.read_json(self.sidecar_path(path))
        origin = tuple(meta.pop("origin", (0, 0)))
        return RGBImage(rgb, meta, origin)

    # Tables

    def write_table(self, frame: pd.DataFrame, path: PathLike):
        """CSV with full float precision and LF line endings"""
        def write():
            self._ensure_parent(path)
            frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        self._guard(write, path)

    def read_table(self, path: PathLike, **kwargs) -> pd.DataFrame:
        kwargs.setdefault("float_precision", "round_trip")

        def read():
            try:
                return pd.read_csv(path, **kwargs)
            except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
                raise FormatError(f"Unreadable table {path}: {e}", details={"path": str(path)})
        return self._guard(read, path)
