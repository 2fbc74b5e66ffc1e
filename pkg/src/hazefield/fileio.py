"""On-disk formats: 8-bit PNG images, PFM float maps, dataset manifests and
the HZNF checkpoint container. Everything is little-endian and byte-stable so
re-running a seeded command reproduces identical artifacts.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .field import Camera
from .haze import QuantizedImage, quantized_from_png

HZNF_MAGIC = b"HZNF"
HZNF_VERSION = 1


class CorruptArtifactError(Exception):
    """A binary artifact failed validation (bad magic, truncation, ...)."""


def write_png(path, image):
    """Write a float image in [0,1] as 8-bit RGB (or grayscale) PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    codes = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(codes).save(str(path), format="PNG")


def read_png(path) -> np.ndarray:
    """Read a PNG as float64 in [0,1]."""
    return read_png_codes(path).astype(np.float64) / 255.0


def read_png_codes(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im, dtype=np.uint8)


def write_pfm(path, data):
    """Write a float map as PFM (little-endian, scale -1.0, rows bottom-up)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf\n"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError("PFM supports HxW or HxWx3 arrays")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise CorruptArtifactError("not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if kind == b"PF" else 1)
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise CorruptArtifactError("truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype)
    shape = (h, w, 3) if kind == b"PF" else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------------------
# HZNF checkpoint container: magic, version u32, then length-prefixed
# little-endian float64 arrays in the order the writer declared.

def save_arrays(path, arrays: List[np.ndarray]):
    with open(path, "wb") as f:
        f.write(HZNF_MAGIC)
        f.write(struct.pack("<I", HZNF_VERSION))
        for arr in arrays:
            flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
            f.write(struct.pack("<Q", flat.size))
            f.write(flat.tobytes())


def load_arrays(path) -> List[np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != HZNF_MAGIC:
            raise CorruptArtifactError("bad checkpoint magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != HZNF_VERSION:
            raise CorruptArtifactError(f"unsupported checkpoint version {version}")
        arrays = []
        while True:
            head = f.read(8)
            if not head:
                break
            if len(head) != 8:
                raise CorruptArtifactError("truncated array header")
            (n,) = struct.unpack("<Q", head)
            payload = f.read(8 * n)
            if len(payload) != 8 * n:
                raise CorruptArtifactError("truncated array payload")
            arrays.append(np.frombuffer(payload, dtype="<f8").copy())
    return arrays


def pack_rng_state(rng: np.random.Generator) -> np.ndarray:
    """Bit-cast a PCG64 generator state into 6 float64 slots."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators are supported")
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    words = np.array([
        s & 0xFFFFFFFFFFFFFFFF, (s >> 64) & 0xFFFFFFFFFFFFFFFF,
        inc & 0xFFFFFFFFFFFFFFFF, (inc >> 64) & 0xFFFFFFFFFFFFFFFF,
        int(st["has_uint32"]), int(st["uinteger"]),
    ], dtype=np.uint64)
    return words.view(np.float64)


def unpack_rng_state(packed: np.ndarray) -> np.random.Generator:
    words = np.asarray(packed, dtype=np.float64).view(np.uint64)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": int(words[0]) | (int(words[1]) << 64),
            "inc": int(words[2]) | (int(words[3]) << 64),
        },
        "has_uint32": int(words[4]),
        "uinteger": int(words[5]),
    }
    return rng


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> bytes:
    """sha256 over the canonical JSON form of a config document."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).digest()


def digest_to_floats(digest: bytes) -> np.ndarray:
    return np.frombuffer(digest, dtype=np.uint64).view(np.float64).copy()


def floats_to_digest(arr: np.ndarray) -> bytes:
    return np.asarray(arr, dtype=np.float64).view(np.uint64).tobytes()


# ---------------------------------------------------------------------------
# Dataset manifest

def camera_to_record(cam: Camera) -> dict:
    return {
        "width": cam.width,
        "height": cam.height,
        "focal": cam.focal,
        "principal_point": [float(v) for v in cam.principal_point],
        "cam_to_world": [float(v) for v in cam.cam_to_world.reshape(-1)],
    }


def camera_from_record(rec: dict, near: float, far: float) -> Camera:
    return Camera(
        width=int(rec["width"]),
        height=int(rec["height"]),
        focal=float(rec["focal"]),
        principal_point=np.asarray(rec["principal_point"], dtype=np.float64),
        cam_to_world=np.asarray(rec["cam_to_world"], dtype=np.float64).reshape(3, 4),
        near=near,
        far=far,
    )


@dataclass
class Dataset:
    """A hazy multi-view dataset. The gt block is for evaluation only and is
    exposed solely through the explicitly named ground-truth accessors."""

    root: Path
    manifest: dict

    @property
    def n_images(self) -> int:
        return len(self.manifest["images"])

    @property
    def background(self) -> np.ndarray:
        return np.asarray(self.manifest["background"], dtype=np.float64)

    @property
    def near(self) -> float:
        return float(self.manifest["near"])

    @property
    def far(self) -> float:
        return float(self.manifest["far"])

    @property
    def levels(self) -> int:
        return int(self.manifest["levels"])

    @property
    def train_indices(self) -> List[int]:
        return list(self.manifest["splits"]["train"])

    @property
    def test_indices(self) -> List[int]:
        return list(self.manifest["splits"]["test"])

    def camera(self, i: int) -> Camera:
        return camera_from_record(self.manifest["cameras"][i], self.near, self.far)

    def hazy_quantized(self, i: int) -> QuantizedImage:
        codes = read_png_codes(self.root / self.manifest["images"][i])
        return quantized_from_png(codes, self.levels)

    def has_ground_truth(self) -> bool:
        return bool(self.manifest.get("gt"))

    def gt_params(self):
        gt = self.manifest.get("gt")
        if not gt:
            raise ValueError("dataset lacks evaluation ground truth")
        return float(gt["beta"]), float(gt["A"])

    def gt_clean(self, i: int) -> np.ndarray:
        gt = self.manifest.get("gt")
        if not gt:
            raise ValueError("dataset lacks evaluation ground truth")
        return read_png(self.root / gt["clean"][i])

    def gt_depth(self, i: int) -> np.ndarray:
        gt = self.manifest.get("gt")
        if not gt:
            raise ValueError("dataset lacks evaluation ground truth")
        return read_pfm(self.root / gt["depth"][i]).astype(np.float64)


def save_manifest(root, manifest: dict):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    with open(manifest_path) as f:
        manifest = json.load(f)
    return Dataset(root=manifest_path.parent, manifest=manifest)
