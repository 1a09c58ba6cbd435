"""Datasets in [0, 1]: PGM/CSV ingestion, synthetic generators, splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import ContractError, RngStream


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    values: np.ndarray  # (n, d)
    original_shape: tuple[int, ...] = ()
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError("dataset values must be 2-D (samples x features)")
        if not self.original_shape:
            self.original_shape = (self.d,)
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0 or not np.isfinite(self.values).all()):
            raise DataFormatError(f"{self.provenance or 'dataset'}: values outside [0, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.values[idx], self.original_shape, self.provenance, dict(self.meta))


def pad_even(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Zero-pad the feature axis to an even length; returns (padded, original_d)."""
    values = np.asarray(values, dtype=np.float64)
    d = values.shape[-1]
    if d % 2 == 0:
        return values, d
    pad = np.zeros(values.shape[:-1] + (1,))
    return np.concatenate([values, pad], axis=-1), d


def strip_pad(values: np.ndarray, original_d: int) -> np.ndarray:
    return values[..., :original_d]


# PGM ------------------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DataFormatError(f"truncated PGM header at byte {start}")
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode a binary P5 image; returns (integer pixels of shape (h, w), maxval)."""
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise DataFormatError(f"not a binary PGM (magic {magic!r}) at byte 0")
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise DataFormatError(f"malformed PGM header field {tok!r} at byte {start}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise DataFormatError(f"invalid PGM dimensions or maxval ({width}x{height}, {maxval}) before byte {pos}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise DataFormatError(f"missing whitespace after PGM header at byte {pos}")
    pos += 1
    nbytes = 1 if maxval < 256 else 2
    need = width * height * nbytes
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise DataFormatError(f"truncated PGM payload at byte {pos + len(payload)}: expected {need} bytes")
    dtype = np.uint8 if nbytes == 1 else np.dtype(">u2")
    pixels = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)
    if pixels.max(initial=0) > maxval:
        raise DataFormatError(f"pixel value exceeds maxval {maxval}")
    return pixels, maxval


def load_pgm(path) -> Dataset:
    path = Path(path)
    pixels, maxval = parse_pgm(path.read_bytes())
    h, w = pixels.shape
    return Dataset((pixels / maxval).reshape(1, h * w), (h, w), str(path), {"maxval": maxval})


def save_pgm(image, path, maxval: int = 255, shape=None) -> None:
    img = np.asarray(image, dtype=np.float64)
    if shape is not None:
        img = img.reshape(shape)
    if img.ndim == 1:
        img = img[None, :]
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataFormatError("pixel values must lie in [0, 1]")
    if not 0 < maxval <= 65535:
        raise ContractError("maxval must lie in [1, 65535]")
    # round half up
    levels = np.floor(img * maxval + 0.5).astype(np.int64)
    h, w = levels.shape
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(levels.astype(dtype).tobytes())


def clip_unit(x: np.ndarray) -> np.ndarray:
    """For writing reconstructions, which may overshoot [0, 1] slightly."""
    return np.clip(x, 0.0, 1.0)


# CSV ------------------------------------------------------------------------


def load_csv_matrix(path, header: bool = False) -> Dataset:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric cell on line {lineno}") from None
            if rows and len(vals) != len(rows[0]):
                raise DataFormatError(f"{path}: ragged row on line {lineno} ({len(vals)} cells, expected {len(rows[0])})")
            if any(not math.isfinite(v) or v < 0.0 or v > 1.0 for v in vals):
                raise DataFormatError(f"{path}: value outside [0, 1] on line {lineno}")
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(rows), provenance=str(path))


def save_csv_matrix(values, path) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def load_any(path, header: bool = False) -> Dataset:
    path = Path(path)
    if path.is_dir():
        images = [load_pgm(p) for p in sorted(path.glob("*.pgm"))]
        if not images:
            raise DataFormatError(f"{path}: no .pgm files")
        shapes = {im.original_shape for im in images}
        if len(shapes) != 1:
            raise DataFormatError(f"{path}: images differ in size {sorted(shapes)}")
        return Dataset(np.concatenate([im.values for im in images]), images[0].original_shape, str(path))
    if path.suffix.lower() == ".pgm":
        return load_pgm(path)
    return load_csv_matrix(path, header=header)


# generators -----------------------------------------------------------------


@dataclass
class ManifoldSpec:
    n: int = 2048
    d: int = 64
    k: int = 2
    seed: int = 0
    kind: str = "sinusoidal"
    freq_scale: float = 6.0
    height: int = 8
    width: int = 8
    u_shift: float = 0.0


def gen_manifold(spec: ManifoldSpec) -> Dataset:
    """Synthetic data on a k-dimensional nonlinear manifold.

    ``sinusoidal``: latent ``u ~ U[0,1]^k + u_shift`` pushed through ``d`` random Fourier
    features ``0.5 + 0.5 sin(w_j . u + phi_j)``, with ``w_j ~ N(0, freq_scale^2)``.
    ``blobs``: ``height x width`` images, each a sum of 1-3 Gaussian bumps with
    random centres, widths and amplitudes, clipped to [0, 1].
    """
    rng = RngStream(spec.seed, f"gen-{spec.kind}")
    if spec.kind == "sinusoidal":
        if not 1 <= spec.k < spec.d:
            raise ContractError(f"need 1 <= k < d, got k={spec.k}, d={spec.d}")
        omega = rng.normal(0.0, spec.freq_scale, (spec.d, spec.k))
        phase = rng.uniform(0.0, 2 * np.pi, spec.d)
        u = rng.uniform(0.0, 1.0, (spec.n, spec.k)) + spec.u_shift
        x = 0.5 + 0.5 * np.sin(u @ omega.T + phase)
        return Dataset(np.clip(x, 0.0, 1.0), (spec.d,), f"gen:sinusoidal:k={spec.k}:seed={spec.seed}")
    if spec.kind == "blobs":
        h, w = spec.height, spec.width
        yy, xx = np.mgrid[0:h, 0:w]
        imgs = np.zeros((spec.n, h, w))
        for i in range(spec.n):
            for _ in range(1 + rng.integer(3)):
                cy, cx = rng.uniform(0, h - 1, 1)[0], rng.uniform(0, w - 1, 1)[0]
                sigma = rng.uniform(0.1, 0.35, 1)[0] * min(h, w)
                amp = rng.uniform(0.4, 1.0, 1)[0]
                imgs[i] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        return Dataset(np.clip(imgs, 0.0, 1.0).reshape(spec.n, h * w), (h, w), f"gen:blobs:seed={spec.seed}")
    raise ContractError(f"unknown generator kind {spec.kind!r}")


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ContractError("train_fraction must lie in (0, 1)")
    order = RngStream(seed, "split").permutation(dataset.n)
    cut = int(round(train_fraction * dataset.n))
    return dataset.subset(np.sort(order[:cut])), dataset.subset(np.sort(order[cut:]))
