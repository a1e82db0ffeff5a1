"""Dataset construction from a directory of coordinate files, with
deterministic filtering, train/validation split and a versioned container."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AirfoilGenError, CorruptFile, EmptyDataset, VersionMismatch
from .geometry import (
    FeatureNormalizer,
    GeometricFeatures,
    ThicknessCamber,
    cosine_grid,
    decompose,
    extract_features,
    fit_normalizer,
)
from .uiuc import interpolation_residual, parse_coordinate_file, resample_to_section

log = logging.getLogger(__name__)

MAGIC = "AGDS"
FORMAT_VERSION = 1

# paper ratio: 40 of 1539 samples held out
VALIDATION_FRACTION = 40.0 / 1539.0


@dataclass(frozen=True)
class FilterConfig:
    """Deterministic replacements for by-eye dataset curation."""

    min_points: int = 20
    min_thickness: float = -1e-4       # below this the foil self-intersects
    t_max_range: tuple = (0.01, 0.7)
    max_residual: float = 5e-3         # resample-vs-raw mismatch
    seed: int = 2024
    validation_fraction: float = VALIDATION_FRACTION


@dataclass
class AirfoilDataset:
    """Thickness/camber matrices plus features, normalizer and split."""

    x: np.ndarray                  # shared grid (g,)
    thickness: np.ndarray          # (n, g)
    camber: np.ndarray             # (n, g)
    features: np.ndarray           # (n, 4) raw feature values
    names: list
    normalizer: FeatureNormalizer
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int
    rejections: list = field(default_factory=list)   # (name, reason)
    extras: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.thickness.shape[0]

    def sample(self, i: int) -> ThicknessCamber:
        return ThicknessCamber(x=self.x, t=self.thickness[i], c=self.camber[i])

    def features_normalized(self) -> np.ndarray:
        return self.normalizer.transform(self.features)

    def feature_records(self) -> list:
        recs = []
        for row in self.features:
            feats = GeometricFeatures(m_max=row[0], gamma_te=row[1], t_max=row[2], r_le=row[3])
            recs.append(self.normalizer.attach(feats))
        return recs


def _apply_filters(name, raw, section, tc, feats, cfg: FilterConfig):
    """Return a rejection reason or None."""
    if raw.n_points < cfg.min_points:
        return f"too few points ({raw.n_points} < {cfg.min_points})"
    if np.min(tc.t) < cfg.min_thickness:
        return f"self-intersecting (min t = {np.min(tc.t):.2e})"
    if not cfg.t_max_range[0] <= feats.t_max <= cfg.t_max_range[1]:
        return f"t_max {feats.t_max:.3f} outside {cfg.t_max_range}"
    residual = interpolation_residual(raw, section)
    if residual > cfg.max_residual:
        return f"interpolation residual {residual:.2e} > {cfg.max_residual:.0e}"
    return None


def build_dataset(directory, cfg: FilterConfig | None = None) -> AirfoilDataset:
    """Parse, filter, resample and split every coordinate file in a directory.

    Files are processed in sorted-name order so the result is independent of
    directory enumeration; every rejection is logged with its reason.
    """
    cfg = cfg or FilterConfig()
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.is_file())
    if not paths:
        raise EmptyDataset(f"no files in {directory}")

    grid = cosine_grid()
    kept_t, kept_c, kept_f, names = [], [], [], []
    rejections = []
    for path in paths:
        try:
            raw = parse_coordinate_file(path.read_bytes(), name_hint=path.stem)
            section = resample_to_section(raw)
            tc = decompose(section)
            feats = extract_features(tc)
            reason = _apply_filters(path.name, raw, section, tc, feats, cfg)
        except AirfoilGenError as exc:
            reason = f"{type(exc).__name__}: {exc}"
        if reason is not None:
            rejections.append((path.name, reason))
            log.info("rejected %s: %s", path.name, reason)
            continue
        kept_t.append(tc.t)
        kept_c.append(tc.c)
        kept_f.append(feats.as_array())
        names.append(path.name)

    if not kept_t:
        raise EmptyDataset(f"all {len(paths)} files rejected")

    n = len(kept_t)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * cfg.validation_fraction))) if n > 1 else 0
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])

    features = np.array(kept_f)
    normalizer = fit_normalizer(
        [GeometricFeatures(*features[i]) for i in train_idx]
    )
    return AirfoilDataset(
        x=grid,
        thickness=np.array(kept_t),
        camber=np.array(kept_c),
        features=features,
        names=names,
        normalizer=normalizer,
        train_idx=train_idx,
        val_idx=val_idx,
        seed=cfg.seed,
        rejections=rejections,
    )


# ---------------------------------------------------------------------------
# Persistence: self-describing JSON and binary flavors
# ---------------------------------------------------------------------------

_ARRAY_FIELDS = ("x", "thickness", "camber", "features", "train_idx", "val_idx")


def _header_dict(ds: AirfoilDataset) -> dict:
    return {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "n_samples": ds.n_samples,
        "grid": {"kind": "cosine", "n": int(ds.x.size)},
        "seed": int(ds.seed),
        "names": list(ds.names),
        "normalizer": ds.normalizer.to_dict(),
        "rejections": [list(r) for r in ds.rejections],
        "extras": ds.extras,
    }


def save_dataset(ds: AirfoilDataset, path, flavor: str = "binary") -> None:
    path = Path(path)
    if flavor == "json":
        doc = _header_dict(ds)
        for name in _ARRAY_FIELDS:
            doc[name] = getattr(ds, name).tolist()
        path.write_text(json.dumps(doc, indent=1, sort_keys=True))
        return
    if flavor != "binary":
        raise ValueError(f"unknown flavor {flavor!r}")

    header = _header_dict(ds)
    blobs = []
    table = []
    offset = 0
    for name in _ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(ds, name))
        raw = arr.tobytes()
        table.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header["arrays"] = table
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(blobs)
    payload = (
        MAGIC.encode()
        + struct.pack("<I", FORMAT_VERSION)
        + struct.pack("<Q", len(header_bytes))
        + header_bytes
        + body
    )
    digest = hashlib.sha256(payload).digest()
    path.write_bytes(payload + digest)


def load_dataset(path) -> AirfoilDataset:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == MAGIC.encode():
        return _load_binary(blob)
    try:
        doc = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path} is neither {MAGIC} binary nor JSON") from exc
    return _load_json(doc)


def _check_version(found):
    if found != FORMAT_VERSION:
        raise VersionMismatch(
            f"file is format version {found}, this build reads version {FORMAT_VERSION}")


def _dataset_from_parts(header: dict, arrays: dict) -> AirfoilDataset:
    return AirfoilDataset(
        x=arrays["x"],
        thickness=arrays["thickness"],
        camber=arrays["camber"],
        features=arrays["features"],
        names=list(header["names"]),
        normalizer=FeatureNormalizer.from_dict(header["normalizer"]),
        train_idx=arrays["train_idx"].astype(np.int64),
        val_idx=arrays["val_idx"].astype(np.int64),
        seed=int(header["seed"]),
        rejections=[tuple(r) for r in header.get("rejections", [])],
        extras=header.get("extras", {}),
    )


def _load_json(doc: dict) -> AirfoilDataset:
    if doc.get("magic") != MAGIC:
        raise CorruptFile("missing magic field")
    _check_version(doc.get("version"))
    arrays = {}
    for name in _ARRAY_FIELDS:
        dtype = np.int64 if name.endswith("_idx") else float
        arrays[name] = np.array(doc[name], dtype=dtype)
    return _dataset_from_parts(doc, arrays)


def _load_binary(blob: bytes) -> AirfoilDataset:
    if len(blob) < 48:
        raise CorruptFile("file truncated")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptFile("checksum mismatch")
    version = struct.unpack("<I", payload[4:8])[0]
    _check_version(version)
    header_len = struct.unpack("<Q", payload[8:16])[0]
    header = json.loads(payload[16 : 16 + header_len].decode())
    body = payload[16 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return _dataset_from_parts(header, arrays)
