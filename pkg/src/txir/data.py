"""Dataset ingestion and the synthetic scene generator.

Images and masks are 8-bit grayscale binary PGM (P5) files; annotations.json
maps each sample to its mask, prompt fields and split. The generator builds
scenes where the prompt is causally useful: small Gaussian blobs appear both
in the top and bottom bands of the image, and only the scene named by the
text decides which band holds real targets:

* scene "sky": smooth gradient background, targets in the top band, decoy
  blobs of the same appearance in the bottom band;
* scene "ground": textured background, targets in the bottom band, decoys in
  the top band.

Masks mark targets only, so no pixel-local rule can separate targets from
decoys without the scene information.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prompts import PromptSpec, render_prompt
from .rng import SplitMix64
from .tensor import TxirError

SPLITS = ("train", "val", "test")
SPLIT_RATIO = (0.6, 0.2, 0.2)


class DatasetError(TxirError):
    """Malformed dataset on disk."""


# --------------------------------------------------------------------------
# PGM (P5, maxval 255)
# --------------------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DatasetError(f"PGM writer needs a 2-d uint8 array, got {arr.shape} {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DatasetError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DatasetError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = w * h
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise DatasetError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


# --------------------------------------------------------------------------
# records and loading
# --------------------------------------------------------------------------

@dataclass
class SampleRecord:
    name: str
    image_path: str
    mask_path: str
    prompt: PromptSpec
    split: str


def assign_splits(n: int, seed: int = 0) -> list[str]:
    """Deterministic 6:2:2 split by seeded shuffle of sample indices."""
    n_train = int(n * SPLIT_RATIO[0])
    n_val = int(n * SPLIT_RATIO[1])
    order = list(range(n))
    stream = SplitMix64(seed)
    for i in range(n - 1, 0, -1):  # Fisher-Yates
        j = stream.next_below(i + 1)
        order[i], order[j] = order[j], order[i]
    splits = [""] * n
    for rank, idx in enumerate(order):
        if rank < n_train:
            splits[idx] = "train"
        elif rank < n_train + n_val:
            splits[idx] = "val"
        else:
            splits[idx] = "test"
    return splits


def load_dataset(root, split_seed: int = 0) -> list[SampleRecord]:
    """Read annotations.json under ``root`` and validate every referenced file."""
    root = Path(root)
    ann_path = root / "annotations.json"
    if not ann_path.exists():
        raise DatasetError(f"{root}: missing annotations.json")
    with open(ann_path) as fh:
        ann = json.load(fh)
    samples = ann.get("samples")
    if not isinstance(samples, list) or not samples:
        raise DatasetError(f"{ann_path}: 'samples' must be a non-empty list")

    records = []
    missing_split = False
    for entry in samples:
        name = entry.get("image", "<unnamed>")
        image_path = root / entry["image"]
        mask_path = root / entry["mask"]
        if not image_path.exists():
            raise DatasetError(f"sample {name}: missing image file {image_path}")
        if not mask_path.exists():
            raise DatasetError(f"sample {name}: missing mask file {mask_path}")
        image = read_pgm(image_path)
        mask = read_pgm(mask_path)
        if image.shape != mask.shape:
            raise DatasetError(f"sample {name}: image {image.shape} and mask {mask.shape} differ")
        values = np.unique(mask)
        if not np.all(np.isin(values, (0, 255))):
            raise DatasetError(f"sample {name}: mask is not binary (values {values[:5]})")
        try:
            prompt = PromptSpec(interested_region=entry["region"], scene=entry["scene"])
        except Exception as exc:
            raise DatasetError(f"sample {name}: unparsable prompt fields: {exc}") from exc
        split = entry.get("split")
        if split is None:
            missing_split = True
            split = ""
        elif split not in SPLITS:
            raise DatasetError(f"sample {name}: unknown split {split!r}")
        records.append(SampleRecord(name=str(entry["image"]), image_path=str(image_path),
                                    mask_path=str(mask_path), prompt=prompt, split=split))
    if missing_split:
        for record, split in zip(records, assign_splits(len(records), split_seed)):
            record.split = split
    return records


# --------------------------------------------------------------------------
# normalization and cropping
# --------------------------------------------------------------------------

def crop_offsets(seed: int, height: int, width: int, size: int) -> tuple[int, int]:
    """Seeded crop corner: two sequential splitmix64 draws modulo the slack."""
    if height < size or width < size:
        raise DatasetError(f"cannot crop {size}x{size} from {height}x{width}")
    stream = SplitMix64(seed)
    oy = stream.next_below(height - size + 1)
    ox = stream.next_below(width - size + 1)
    return oy, ox


def normalize_and_crop(image: np.ndarray, size: int, seed: int = 0,
                       train: bool = True) -> np.ndarray:
    """Scale 8-bit pixels to [0,1] and crop to size x size.

    Training uses a seeded random corner; evaluation uses the center crop.
    The same seed always produces the same crop.
    """
    h, w = image.shape
    if train:
        oy, ox = crop_offsets(seed, h, w, size)
    else:
        oy, ox = (h - size) // 2, (w - size) // 2
        if oy < 0 or ox < 0:
            raise DatasetError(f"cannot crop {size}x{size} from {h}x{w}")
    window = image[oy:oy + size, ox:ox + size]
    return window.astype(np.float32) / 255.0


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclass
class SynthSpec:
    count: int = 300
    size: int = 64
    scenes: tuple[str, ...] = ("sky", "ground")
    targets_min: int = 1
    targets_max: int = 3
    sigma_min: float = 0.7
    sigma_max: float = 1.5
    decoys_min: int = 0
    decoys_max: int = 4
    noise_sigma: float = 0.02
    seed: int = 0
    split_counts: tuple[int, int, int] | None = None   # explicit (train, val, test)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        d = json.loads(text)
        for key in ("scenes", "split_counts"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def mask_pixel_bound(spec: SynthSpec) -> int:
    """Upper bound on mask pixels of a single blob (half-peak disc support)."""
    r = 1.1774 * spec.sigma_max  # half-peak radius of a Gaussian
    return int(math.ceil(math.pi * (r + 0.75) ** 2))


def _value_noise(rng: np.random.Generator, size: int, cells: int = 8) -> np.ndarray:
    """Coarse random grid bilinearly upsampled: a cheap smooth texture in [0,1]."""
    grid = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, size)
    xs = np.linspace(0, cells, size)
    y0 = np.clip(ys.astype(int), 0, cells - 1)
    x0 = np.clip(xs.astype(int), 0, cells - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (g00 * (1 - ty) * (1 - tx) + g01 * (1 - ty) * tx
            + g10 * ty * (1 - tx) + g11 * ty * tx)


def _background(rng: np.random.Generator, scene: str, size: int) -> np.ndarray:
    ys = np.linspace(0, 1, size)[:, None]
    xs = np.linspace(0, 1, size)[None, :]
    if scene == "sky":
        tilt = rng.uniform(-0.05, 0.05)
        return 0.50 - 0.25 * ys + tilt * (xs - 0.5)
    # ground: textured background in the same intensity range
    return 0.25 + 0.25 * _value_noise(rng, size)


def _place_blobs(rng: np.random.Generator, size: int, band: tuple[int, int],
                 count: int, sigmas: list[float],
                 taken: list[tuple[float, float, float]]) -> list[tuple[float, float, float]]:
    """Place blob centers inside a row band, rejecting overlaps; returns
    (cy, cx, sigma) triples. Raises after bounded retries."""
    placed = []
    for sigma in sigmas:
        margin = math.ceil(3 * sigma) + 1
        lo = max(band[0], margin)
        hi = min(band[1], size - margin)
        if hi <= lo:
            raise DatasetError(f"band {band} too narrow for sigma {sigma}")
        for attempt in range(200):
            cy = rng.uniform(lo, hi)
            cx = rng.uniform(margin, size - margin)
            min_sep_ok = True
            for (oy, ox, osig) in taken + placed:
                need = 3 * (sigma + osig) / 2 + 2
                if math.hypot(cy - oy, cx - ox) < need:
                    min_sep_ok = False
                    break
            if min_sep_ok:
                placed.append((cy, cx, sigma))
                break
        else:
            raise DatasetError(f"could not place blob after 200 attempts (band {band})")
    return placed


def _render_blob(canvas: np.ndarray, cy: float, cx: float, sigma: float, amp: float) -> None:
    size = canvas.shape[0]
    r = math.ceil(3.5 * sigma)
    y0, y1 = max(0, int(cy) - r), min(size, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(size, int(cx) + r + 1)
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    canvas[y0:y1, x0:x1] += amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))


def _blob_mask(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    """Half-peak support of the blob: pixels within sigma*sqrt(2 ln 2) of center."""
    r = 1.1774 * sigma
    y0, y1 = max(0, int(cy - r - 1)), min(size, int(cy + r + 2))
    x0, x1 = max(0, int(cx - r - 1)), min(size, int(cx + r + 2))
    mask = np.zeros((size, size), dtype=bool)
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    mask[y0:y1, x0:x1] = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    return mask


def generate_synthetic(spec: SynthSpec, out_dir) -> list[SampleRecord]:
    """Write images/, masks/ and annotations.json; byte-identical per seed."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    size = spec.size
    top_band = (2, int(0.42 * size))
    bottom_band = (int(0.58 * size), size - 2)

    if spec.split_counts is not None:
        if sum(spec.split_counts) != spec.count:
            raise DatasetError(f"split counts {spec.split_counts} do not sum to {spec.count}")
        split_list = (["train"] * spec.split_counts[0] + ["val"] * spec.split_counts[1]
                      + ["test"] * spec.split_counts[2])
        # deterministic shuffle so splits are not correlated with sample index
        order_stream = SplitMix64(spec.seed ^ 0xA5A5A5A5)
        for i in range(len(split_list) - 1, 0, -1):
            j = order_stream.next_below(i + 1)
            split_list[i], split_list[j] = split_list[j], split_list[i]
    else:
        split_list = assign_splits(spec.count, spec.seed)

    entries = []
    records = []
    for index in range(spec.count):
        rng = np.random.default_rng([spec.seed, index])
        scene = spec.scenes[int(rng.integers(len(spec.scenes)))]
        target_band = top_band if scene == "sky" else bottom_band
        decoy_band = bottom_band if scene == "sky" else top_band

        n_targets = int(rng.integers(spec.targets_min, spec.targets_max + 1))
        n_decoys = int(rng.integers(spec.decoys_min, spec.decoys_max + 1))
        t_sigmas = [float(rng.uniform(spec.sigma_min, spec.sigma_max)) for _ in range(n_targets)]
        d_sigmas = [float(rng.uniform(spec.sigma_min, spec.sigma_max)) for _ in range(n_decoys)]

        targets = _place_blobs(rng, size, target_band, n_targets, t_sigmas, [])
        decoys = _place_blobs(rng, size, decoy_band, n_decoys, d_sigmas, targets)

        image = _background(rng, scene, size)
        mask = np.zeros((size, size), dtype=bool)
        for (cy, cx, sigma) in targets:
            amp = float(rng.uniform(0.35, 0.5))
            _render_blob(image, cy, cx, sigma, amp)
            mask |= _blob_mask(size, cy, cx, sigma)
        for (cy, cx, sigma) in decoys:
            amp = float(rng.uniform(0.35, 0.5))
            _render_blob(image, cy, cx, sigma, amp)
        if spec.noise_sigma > 0:
            image = image + rng.normal(0.0, spec.noise_sigma, image.shape)

        image_u8 = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
        mask_u8 = np.where(mask, 255, 0).astype(np.uint8)
        name = f"sample_{index:05d}.pgm"
        write_pgm(out / "images" / name, image_u8)
        write_pgm(out / "masks" / name, mask_u8)

        prompt = PromptSpec(interested_region=scene, scene=scene)
        split = split_list[index]
        entries.append({"image": f"images/{name}", "mask": f"masks/{name}",
                        "region": prompt.interested_region, "scene": prompt.scene,
                        "split": split})
        records.append(SampleRecord(name=f"images/{name}",
                                    image_path=str(out / "images" / name),
                                    mask_path=str(out / "masks" / name),
                                    prompt=prompt, split=split))

    with open(out / "annotations.json", "w") as fh:
        json.dump({"samples": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return records


def record_prompt(record: SampleRecord) -> str:
    return render_prompt(record.prompt)
