"""Image codecs, manifests, feature export, and fixture generation.

Images live in memory as (3, H, W) float64 arrays in [0, 1] and on disk
as 8-bit P6 PPM (reference format, byte-exact) or 8-bit RGB PNG
(convenience input). Feature matrices serialize to a little-endian
binary format with a trailing path index. The fixture generators
produce deterministic pristine corpora and distorted evaluation sets
with a monotone severity-to-quality pseudo-score.
"""

import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .engine.batch import (
    EngineConfig,
    sample_composition,
    sample_levels,
    apply_composition,
)
from .rng import substream

FEATURE_MAGIC = b"SHAF"
FEATURE_VERSION = 1


# ----------------------------------------------------------------- codecs


def _ppm_tokens(data):
    """Yield (token, next_offset) over a PPM header, skipping comments."""
    pos = 0
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            yield data[pos:end], end
            pos = end


def _decode_ppm(data):
    tokens = []
    offset = 0
    it = _ppm_tokens(data)
    try:
        for _ in range(4):
            tok, offset = next(it)
            tokens.append(tok)
    except StopIteration:
        raise ValueError("malformed header: incomplete P6 preamble") from None
    if tokens[0] != b"P6":
        raise ValueError(f"malformed header: expected P6, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError("malformed header: non-numeric P6 dimensions") from None
    if w < 1 or h < 1:
        raise ValueError(f"malformed header: bad dimensions {w}x{h}")
    if maxval != 255:
        raise ValueError(f"unsupported bit depth: maxval {maxval} (only 255)")
    payload = data[offset + 1 :]  # single whitespace after maxval
    expected = w * h * 3
    if len(payload) < expected:
        raise ValueError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}"
        )
    pix = np.frombuffer(payload[:expected], dtype=np.uint8)
    return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def _decode_png(data):
    from PIL import Image

    img = Image.open(io.BytesIO(data))
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise ValueError(f"unsupported bit depth: PNG mode {img.mode}")
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.uint8)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def decode_image(data):
    """Bytes (P6 PPM or 8-bit RGB PNG) -> (3, H, W) float64 in [0, 1]."""
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(data)
    if data[:2] == b"P6":
        return _decode_ppm(data)
    raise ValueError("malformed header: neither P6 PPM nor PNG")


def encode_ppm(image):
    """(3, H, W) floats in [0, 1] -> binary P6 bytes (8-bit, rounded)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("expected a (3, H, W) image")
    q = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = image.shape[1:]
    return b"P6\n%d %d\n255\n" % (w, h) + q.transpose(1, 2, 0).tobytes()


def read_image(path):
    with open(path, "rb") as f:
        return decode_image(f.read())


def write_ppm(path, image):
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


# ---------------------------------------------------------------- features


def export_features(features, paths, out_path):
    """Write a (rows, cols) float32 matrix plus its row path index."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    if features.shape[0] != len(paths):
        raise ValueError(
            f"row count {features.shape[0]} does not match {len(paths)} paths"
        )
    with open(out_path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, *features.shape))
        f.write(features.astype("<f4", copy=False).tobytes(order="C"))
        for p in paths:
            enc = str(p).encode("utf-8")
            if len(enc) > 0xFFFF:
                raise ValueError(f"path too long: {p!r}")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)


def load_features(path):
    """Read a feature file back -> (float32 matrix, list of paths)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"bad magic: {data[:4]!r}")
    version, rows, cols = struct.unpack_from("<III", data, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"unsupported feature-file version: {version}")
    pos = 16
    need = rows * cols * 4
    if len(data) - pos < need:
        raise ValueError(
            f"truncated payload: expected {need} bytes, got {len(data) - pos}"
        )
    mat = np.frombuffer(data[pos : pos + need], dtype="<f4").reshape(rows, cols)
    pos += need
    paths = []
    for _ in range(rows):
        if len(data) - pos < 2:
            raise ValueError("truncated path index")
        (plen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if len(data) - pos < plen:
            raise ValueError("truncated path entry")
        paths.append(data[pos : pos + plen].decode("utf-8"))
        pos += plen
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes after path index")
    return mat.copy(), paths


# ---------------------------------------------------------------- manifest


@dataclass
class Manifest:
    paths: list
    scores: np.ndarray
    ref_ids: list = None
    split_tags: list = None

    def __len__(self):
        return len(self.paths)


_HEADERS = {
    ("path", "score"): (False, False),
    ("path", "score", "ref_id"): (True, False),
    ("path", "score", "split"): (False, True),
    ("path", "score", "ref_id", "split"): (True, True),
}


def parse_manifest(path):
    """CSV with header `path,score[,ref_id][,split]` -> Manifest.

    Rejects duplicate paths and non-finite scores, naming the line.
    """
    import csv

    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError("empty manifest")
    header = tuple(h.strip() for h in rows[0])
    if header not in _HEADERS:
        raise ValueError(f"line 1: unsupported manifest header {list(header)}")
    has_ref, has_split = _HEADERS[header]
    paths, scores, refs, tags = [], [], [], []
    seen = {}
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {ln}: expected {len(header)} fields, got {len(row)}")
        p = row[0].strip()
        if p in seen:
            raise ValueError(f"line {ln}: duplicate path {p!r} (first on line {seen[p]})")
        seen[p] = ln
        try:
            score = float(row[1])
        except ValueError:
            raise ValueError(f"line {ln}: unreadable score {row[1]!r}") from None
        if not np.isfinite(score):
            raise ValueError(f"line {ln}: non-finite score {row[1]!r}")
        paths.append(p)
        scores.append(score)
        if has_ref:
            refs.append(row[2].strip())
        if has_split:
            tags.append(row[-1].strip())
    return Manifest(
        paths,
        np.array(scores, dtype=np.float64),
        refs if has_ref else None,
        tags if has_split else None,
    )


def write_manifest(path, manifest):
    cols = ["path", "score"]
    if manifest.ref_ids is not None:
        cols.append("ref_id")
    if manifest.split_tags is not None:
        cols.append("split")
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for i, p in enumerate(manifest.paths):
            row = [str(p), repr(float(manifest.scores[i]))]
            if manifest.ref_ids is not None:
                row.append(str(manifest.ref_ids[i]))
            if manifest.split_tags is not None:
                row.append(str(manifest.split_tags[i]))
            f.write(",".join(row) + "\n")


# ---------------------------------------------------------- fixture corpus


def _fixture_gradient(rng, size):
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    base = rng.uniform(0.2, 0.8, size=3)
    slope = rng.uniform(-0.45, 0.45, size=3)
    curve = rng.uniform(0.0, 0.15, size=3)
    freq = rng.uniform(1.0, 3.0)
    img = base[:, None, None] + slope[:, None, None] * t
    img = img + curve[:, None, None] * np.sin(2 * np.pi * freq * t)
    return img


def _fixture_texture(rng, size):
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    pattern = np.zeros((size, size))
    for _ in range(6):
        fx, fy = rng.uniform(0.02, 0.22, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        pattern += amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    pattern = (pattern - pattern.min()) / max(pattern.max() - pattern.min(), 1e-9)
    lo = rng.uniform(0.05, 0.25, size=3)
    hi = rng.uniform(0.7, 0.95, size=3)
    return lo[:, None, None] + (hi - lo)[:, None, None] * pattern


def _fixture_shapes(rng, size):
    img = _fixture_gradient(rng, size)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for _ in range(10):
        color = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0, size, size=2)
        extent = rng.uniform(0.06, 0.3) * size
        if rng.uniform() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= extent**2
        else:
            mask = (np.abs(yy - cy) <= extent) & (np.abs(xx - cx) <= extent * 0.7)
        img[:, mask] = color[:, None]
    return img


def _fixture_bandnoise(rng, size):
    field = rng.normal(size=(size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    cutoff = rng.uniform(0.04, 0.22)
    keep = np.sqrt(fy**2 + fx**2) <= cutoff
    smooth = np.fft.irfft2(np.fft.rfft2(field) * keep, s=(size, size))
    smooth = (smooth - smooth.min()) / max(smooth.max() - smooth.min(), 1e-9)
    lo = rng.uniform(0.05, 0.3, size=3)
    hi = rng.uniform(0.65, 0.95, size=3)
    return lo[:, None, None] + (hi - lo)[:, None, None] * smooth


_FIXTURE_KINDS = (_fixture_gradient, _fixture_texture, _fixture_shapes, _fixture_bandnoise)


def generate_fixture_images(n, size, seed):
    """n deterministic pristine images cycling four content families."""
    if n < 1:
        raise ValueError("need at least one image")
    if size < 32:
        raise ValueError("fixture images must be at least 32 pixels")
    images = []
    for i in range(n):
        rng = substream(seed, "fixture", i)
        img = _FIXTURE_KINDS[i % len(_FIXTURE_KINDS)](rng, size)
        images.append(np.clip(img, 0.0, 1.0))
    return images


def generate_fixture_corpus(n, size, seed, out_dir):
    """Write a pristine fixture corpus plus its manifest; return the Manifest."""
    os.makedirs(out_dir, exist_ok=True)
    images = generate_fixture_images(n, size, seed)
    paths = []
    for i, img in enumerate(images):
        name = f"ref_{i:04d}.ppm"
        write_ppm(os.path.join(out_dir, name), img)
        paths.append(name)
    manifest = Manifest(paths, np.ones(n))
    write_manifest(os.path.join(out_dir, "manifest.csv"), manifest)
    return manifest


# ------------------------------------------------------ distorted eval sets

_META_FIELDS = (
    "source",
    "i",
    "j",
    "k",
    "l",
    "categories",
    "function_ids",
    "order",
    "base_severities",
    "varying_coordinate",
    "level_severity",
)


@dataclass
class EvalRecord:
    image: np.ndarray
    source: str
    i: int
    j: int
    k: int
    l: int
    spec: object  # CompositionSpec
    level: float

    @property
    def pseudo_mos(self):
        sev = np.array(self.spec.base, dtype=np.float64)
        sev[self.spec.varying] = self.level
        return float(1.0 - sev.mean())

    def meta_dict(self):
        return {
            "source": self.source,
            "i": self.i,
            "j": self.j,
            "k": self.k,
            "l": self.l,
            "categories": list(self.spec.categories),
            "function_ids": list(self.spec.fids),
            "order": [int(o) for o in self.spec.order],
            "base_severities": [float(s) for s in self.spec.base],
            "varying_coordinate": int(self.spec.varying),
            "level_severity": float(self.level),
        }


def build_eval_set(images, names, config, count, seed):
    """Distorted full-size images with batch-structured provenance.

    Rounds of the training-batch layout (tiny-batch i, reference j,
    group k, level l) are generated on whole images until `count`
    records exist; references cycle through shuffled corpus epochs.
    """
    if count < 1:
        raise ValueError("need at least one output image")
    if len(images) != len(names):
        raise ValueError("images and names disagree in length")
    if len(images) < 1:
        raise ValueError("corpus is empty")
    c = config
    records = []
    ref_iter = _eval_reference_indices(len(images), seed)
    r = 0
    while len(records) < count:
        bk = (seed, "eval", r)
        comp_rng = substream(*bk, "compositions")
        sev_rng = substream(*bk, "severities")
        picked = [next(ref_iter) for _ in range(c.n_ref)]
        specs, levels = {}, {}
        for i in range(c.B):
            for k in range(c.C):
                specs[(i, k)] = sample_composition(comp_rng, c, severity_rng=sev_rng)
                levels[(i, k)] = sample_levels(sev_rng, c)
        for k in range(c.C):
            for l in range(c.L):
                for i in range(c.B):
                    for j in range(c.R):
                        if len(records) >= count:
                            return records
                        ref = picked[i * c.R + j]
                        spec = specs[(i, k)]
                        level = float(levels[(i, k)][l])
                        img = apply_composition(
                            images[ref],
                            spec,
                            level,
                            rng=substream(*bk, "noise", i, j, k, l),
                        )
                        records.append(
                            EvalRecord(
                                img, str(names[ref]), i, j, k, l, spec, level
                            )
                        )
        r += 1
    return records


def _eval_reference_indices(n_images, seed):
    epoch = 0
    while True:
        order = substream(seed, "sampling", epoch).permutation(n_images)
        for idx in order:
            yield int(idx)
        epoch += 1


def write_eval_set(records, out_dir, meta_name="metadata.jsonl", manifest_name="manifest.csv"):
    """PPMs + one JSON line per image + a pseudo-MOS manifest with ref ids."""
    os.makedirs(out_dir, exist_ok=True)
    paths, scores, refs = [], [], []
    with open(os.path.join(out_dir, meta_name), "w") as mf:
        for idx, rec in enumerate(records):
            name = f"dist_{idx:05d}.ppm"
            write_ppm(os.path.join(out_dir, name), rec.image)
            mf.write(json.dumps(rec.meta_dict()) + "\n")
            paths.append(name)
            scores.append(rec.pseudo_mos)
            refs.append(rec.source)
    manifest = Manifest(paths, np.array(scores), refs)
    write_manifest(os.path.join(out_dir, manifest_name), manifest)
    return manifest
