"""Synthetic iris dataset generation and dataset manifests.

The renderer draws a sclera ellipse, an iris annulus carrying an
identity-specific radial/angular texture, a pupil disk, and optional
eyelid / specular-highlight nuisance structure.  Everything derives from
explicit seeds, so regenerating a dataset reproduces identical bytes.
Real datasets laid out in the UTiris directory convention can be
imported into the same manifest schema (images are user-supplied).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from irisauth.errors import ContractViolation, ManifestError

__all__ = [
    "IrisSample", "DatasetManifest", "SynthSpec", "render_eye",
    "synth_dataset", "load_manifest", "save_manifest", "detector_split",
    "load_image", "save_image", "load_mask", "save_mask",
    "save_extracted", "load_extracted",
    "import_utiris_tree", "class_report",
]

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class IrisSample:
    """One labeled eye image; paths are relative to the manifest root."""

    path: str
    identity: int
    eye: str  # "left" | "right"
    spectrum: str  # "VW" | "NIR"
    box: tuple[float, float, float, float] | None = None
    mask_path: str | None = None

    def __post_init__(self):
        if self.eye not in ("left", "right"):
            raise ManifestError(f"bad eye {self.eye!r} for {self.path}")
        if self.spectrum not in ("VW", "NIR"):
            raise ManifestError(f"bad spectrum {self.spectrum!r} for {self.path}")
        if self.identity < 0:
            raise ManifestError(f"negative identity for {self.path}")
        if self.box is not None and len(self.box) != 4:
            raise ManifestError(f"box must have 4 coordinates for {self.path}")


@dataclass
class DatasetManifest:
    """Collection index: a root directory plus sample records."""

    root: Path
    samples: list[IrisSample] = field(default_factory=list)

    def image_path(self, sample: IrisSample) -> Path:
        return self.root / sample.path

    def mask_file(self, sample: IrisSample) -> Path | None:
        return self.root / sample.mask_path if sample.mask_path else None

    def filter_spectrum(self, spectrum: str) -> "DatasetManifest":
        return DatasetManifest(
            self.root, [s for s in self.samples if s.spectrum == spectrum])

    def identities(self) -> list[int]:
        return sorted({s.identity for s in self.samples})


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic dataset generator."""

    num_identities: int = 20
    images_per_identity: int = 40
    image_size: int = 64
    spectrum: str = "VW"
    eyelid: bool = True
    highlight: bool = True
    partial: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.num_identities <= 0 or self.images_per_identity <= 0:
            raise ContractViolation("identity and image counts must be positive")
        if self.image_size < 16:
            raise ContractViolation(f"image_size too small: {self.image_size}")
        if self.spectrum not in ("VW", "NIR"):
            raise ContractViolation(f"spectrum must be VW or NIR, got {self.spectrum!r}")


# ---------------------------------------------------------------------------
# rendering


def _identity_texture_params(spec: SynthSpec, identity: int) -> dict:
    rng = np.random.default_rng([spec.seed, identity, 0xA11CE])
    n_ang = 4
    n_rad = 3
    return {
        "ang_freq": rng.integers(2, 11, size=n_ang),
        "ang_phase": rng.uniform(0, 2 * np.pi, size=n_ang),
        "ang_amp": rng.uniform(0.10, 0.22, size=n_ang),
        "rad_freq": rng.integers(2, 7, size=n_rad),
        "rad_phase": rng.uniform(0, 2 * np.pi, size=n_rad),
        "rad_amp": rng.uniform(0.08, 0.18, size=n_rad),
        "base": rng.uniform(0.35, 0.6),
        "hue": rng.uniform(0.55, 1.0, size=3),  # per-channel gain for VW
    }


def render_eye(identity: int, index: int, spec: SynthSpec,
               ) -> tuple[np.ndarray, tuple[float, float, float, float], np.ndarray]:
    """Render one eye; returns (image [C,H,W] in [0,1], gt box, gt mask).

    The box is the tight bounding rectangle of the visible iris annulus
    mask.  Identical (identity, index, spec) always produce identical
    arrays.
    """
    size = spec.image_size
    tex = _identity_texture_params(spec, identity)
    rng = np.random.default_rng([spec.seed, identity, index])

    cx = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    cy = size / 2 + rng.uniform(-size * 0.08, size * 0.08)
    r_iris = size * rng.uniform(0.20, 0.30)
    r_pupil = r_iris * rng.uniform(0.30, 0.42)
    rot = rng.uniform(0, 2 * np.pi)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    rr = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx) + rot

    grey = np.full((size, size), 0.08, dtype=np.float64)
    grey += rng.normal(0.0, 0.01, size=(size, size))

    sclera = rr <= r_iris * 2.1
    grey[sclera] = 0.85

    annulus = (rr > r_pupil) & (rr <= r_iris)
    t = np.zeros_like(rr)
    t[annulus] = (rr[annulus] - r_pupil) / max(r_iris - r_pupil, 1e-9)
    texture = np.full_like(rr, tex["base"])
    for f, p, a in zip(tex["ang_freq"], tex["ang_phase"], tex["ang_amp"]):
        texture += a * np.sin(f * theta + p)
    for f, p, a in zip(tex["rad_freq"], tex["rad_phase"], tex["rad_amp"]):
        texture += a * np.sin(f * np.pi * t + p)
    texture += rng.normal(0.0, 0.015, size=(size, size))
    grey[annulus] = texture[annulus]

    pupil = rr <= r_pupil
    grey[pupil] = 0.05

    visible = annulus.copy()
    if spec.eyelid and rng.random() < 0.7:
        # Upper eyelid: everything above a shallow parabola is skin.
        droop = rng.uniform(0.05, 0.5)
        lid_y = cy - r_iris * (1.0 - droop) + ((xx - cx) ** 2) / (r_iris * 3.0)
        lid = yy < lid_y
        grey[lid] = 0.70
        visible &= ~lid
    if spec.highlight and rng.random() < 0.6:
        hx = cx + rng.uniform(-0.4, 0.4) * r_iris
        hy = cy + rng.uniform(-0.4, 0.4) * r_iris
        hr = r_iris * rng.uniform(0.08, 0.16)
        spot = ((xx - hx) / (hr * 1.6)) ** 2 + ((yy - hy) / hr) ** 2 <= 1.0
        grey[spot] = 0.98
    if spec.partial and rng.random() < 0.3:
        cut = int(size * rng.uniform(0.6, 0.9))
        grey[:, cut:] = 0.08
        visible[:, cut:] = False

    grey = np.clip(grey, 0.0, 1.0)
    if not visible.any():
        # Degenerate draw (fully occluded); fall back to the bare annulus.
        visible = annulus

    ys, xs = np.nonzero(visible)
    box = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))

    if spec.spectrum == "NIR":
        image = grey[None, :, :]
    else:
        image = np.clip(grey[None, :, :] * tex["hue"][:, None, None], 0.0, 1.0)
    return image.astype(np.float32), box, visible


# ---------------------------------------------------------------------------
# image / mask file formats (lossless on purpose: padding-purity checks
# depend on exact zeros surviving a round trip)


def save_image(path: Path, image01: np.ndarray) -> None:
    """Quantize a [C,H,W] float image in [0,1] to an 8-bit PNG."""
    arr = np.rint(np.clip(image01, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    """Load an image as float32 [C,H,W] with values in [0,255]."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def save_mask(path: Path, mask: np.ndarray) -> None:
    """Write a binary [H,W] mask as a 1-bit PBM (P4) raster."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    header = f"P4\n{w} {h}\n".encode("ascii")
    packed = np.packbits(mask, axis=1)
    path.write_bytes(header + packed.tobytes())


def load_mask(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P4"):
        raise ManifestError(f"not a P4 bitmap: {path}")
    # Header: magic, whitespace, width, whitespace, height, single whitespace.
    parts = raw[2:].split(maxsplit=2)
    w, h = int(parts[0]), int(parts[1])
    body = parts[2] if len(parts) > 2 else b""
    row_bytes = (w + 7) // 8
    bits = np.unpackbits(
        np.frombuffer(body[: row_bytes * h], dtype=np.uint8).reshape(h, row_bytes),
        axis=1)
    return bits[:, :w].astype(bool)


# ---------------------------------------------------------------------------
# dataset generation and manifest I/O


def synth_dataset(spec: SynthSpec, out_dir: Path) -> DatasetManifest:
    """Render the full dataset under ``out_dir`` and write its manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    samples: list[IrisSample] = []
    for identity in range(spec.num_identities):
        for index in range(spec.images_per_identity):
            image, box, mask = render_eye(identity, index, spec)
            stem = f"id{identity:03d}_img{index:03d}"
            img_rel = f"images/{stem}.png"
            mask_rel = f"masks/{stem}.pbm"
            save_image(out_dir / img_rel, image)
            save_mask(out_dir / mask_rel, mask)
            samples.append(IrisSample(
                path=img_rel,
                identity=identity,
                eye="left" if identity % 2 == 0 else "right",
                spectrum=spec.spectrum,
                box=box,
                mask_path=mask_rel,
            ))
    manifest = DatasetManifest(root=out_dir, samples=samples)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "samples": [
            {
                "path": s.path,
                "identity": s.identity,
                "eye": s.eye,
                "spectrum": s.spectrum,
                "box": list(s.box) if s.box is not None else None,
                "mask_path": s.mask_path,
            }
            for s in manifest.samples
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path: Path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "samples" not in doc:
        raise ManifestError(f"manifest {path} lacks a samples list")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"manifest {path} has version {doc.get('version')!r}, "
            f"expected {MANIFEST_VERSION}")
    root = path.parent
    samples = []
    for i, rec in enumerate(doc["samples"]):
        try:
            sample = IrisSample(
                path=rec["path"],
                identity=int(rec["identity"]),
                eye=rec["eye"],
                spectrum=rec["spectrum"],
                box=tuple(rec["box"]) if rec.get("box") is not None else None,
                mask_path=rec.get("mask_path"),
            )
        except (KeyError, TypeError, ManifestError) as exc:
            raise ManifestError(f"manifest record {i} is invalid: {exc}") from exc
        if check_files:
            img = root / sample.path
            if not img.exists():
                raise ManifestError(f"missing image file: {img}")
            if sample.mask_path and not (root / sample.mask_path).exists():
                raise ManifestError(f"missing mask file: {root / sample.mask_path}")
        samples.append(sample)
    return DatasetManifest(root=root, samples=samples)


def class_report(manifest: DatasetManifest) -> dict:
    """Identity-level vs eye-level class counts plus the image count."""
    identities = {s.identity for s in manifest.samples}
    eye_classes = {(s.identity, s.eye) for s in manifest.samples}
    return {
        "images": len(manifest.samples),
        "identities": len(identities),
        "eye_classes": len(eye_classes),
        "spectra": sorted({s.spectrum for s in manifest.samples}),
    }


def detector_split(manifest: DatasetManifest, train_fraction: float = 0.2,
                   seed: int = 0) -> tuple[list[IrisSample], list[IrisSample]]:
    """Seeded shuffle-and-split into (train, test); disjoint and covering."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractViolation(
            f"train_fraction must lie in (0,1), got {train_fraction}")
    n = len(manifest.samples)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ContractViolation(
            f"split of {n} samples at {train_fraction} leaves an empty side")
    order = np.random.default_rng([seed, 0x5197]).permutation(n)
    train = [manifest.samples[i] for i in order[:n_train]]
    test = [manifest.samples[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# extracted (normalized-crop) datasets: what the classifier trains on


def save_extracted(out_dir: Path, crops: list[np.ndarray],
                   samples: list[IrisSample], square_size: int) -> Path:
    """Persist normalized crops as float32 .npy files plus an index.

    Keeping the crops lossless matters: the padded region must stay
    exactly zero through the round trip.
    """
    out_dir = Path(out_dir)
    (out_dir / "crops").mkdir(parents=True, exist_ok=True)
    if len(crops) != len(samples):
        raise ContractViolation(
            f"{len(crops)} crops for {len(samples)} samples")
    records = []
    for i, (crop, sample) in enumerate(zip(crops, samples)):
        rel = f"crops/{i:05d}.npy"
        np.save(out_dir / rel, np.ascontiguousarray(crop, dtype=np.float32))
        records.append({
            "path": rel,
            "identity": sample.identity,
            "eye": sample.eye,
            "spectrum": sample.spectrum,
        })
    index = out_dir / "extracted.json"
    index.write_text(json.dumps(
        {"version": MANIFEST_VERSION, "square_size": square_size,
         "samples": records},
        indent=1, sort_keys=True) + "\n")
    return index


def load_extracted(index_path: Path, label_mode: str = "identity",
                   spectrum: str | None = None,
                   ) -> tuple[np.ndarray, np.ndarray, dict]:
    """Load an extracted dataset: (crops [N,3,S,S], raw labels, info).

    ``label_mode`` selects identity-level labels or eye-level labels
    (identity and eye jointly).
    """
    index_path = Path(index_path)
    if label_mode not in ("identity", "eye"):
        raise ContractViolation(f"label_mode must be identity or eye, got {label_mode!r}")
    try:
        doc = json.loads(index_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read extracted index {index_path}: {exc}") from exc
    root = index_path.parent
    crops, labels = [], []
    for rec in doc["samples"]:
        if spectrum is not None and rec["spectrum"] != spectrum:
            continue
        crops.append(np.load(root / rec["path"]))
        if label_mode == "identity":
            labels.append(rec["identity"])
        else:
            labels.append(rec["identity"] * 2 + (1 if rec["eye"] == "right" else 0))
    if not crops:
        raise ManifestError(
            f"no samples in {index_path}"
            + (f" for spectrum {spectrum}" if spectrum else ""))
    info = {
        "square_size": doc.get("square_size"),
        "count": len(crops),
        "spectra": sorted({rec["spectrum"] for rec in doc["samples"]}),
    }
    return np.stack(crops), np.asarray(labels, dtype=np.int64), info


# ---------------------------------------------------------------------------
# UTiris-convention import (data is user-supplied, never bundled)


def import_utiris_tree(root: Path) -> DatasetManifest:
    """Build a manifest from a per-person tree with VW/NIR subfolders.

    Expected layout: ``root/<person>/<VW|NIR>/<name>_{L|R}_<n>.<ext>``.
    Identity indices follow sorted person-directory order; boxes and
    masks are absent (the detector provides regions at run time).
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root is not a directory: {root}")
    samples: list[IrisSample] = []
    person_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not person_dirs:
        raise ManifestError(f"no person directories under {root}")
    for identity, person in enumerate(person_dirs):
        for session in sorted(p for p in person.iterdir() if p.is_dir()):
            spectrum = session.name.upper()
            if spectrum not in ("VW", "NIR"):
                continue
            for img in sorted(session.iterdir()):
                if img.suffix.lower() not in (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"):
                    continue
                upper = img.stem.upper()
                eye = None
                for token in upper.replace("-", "_").split("_"):
                    if token == "L":
                        eye = "left"
                    elif token == "R":
                        eye = "right"
                if eye is None:
                    raise ManifestError(
                        f"cannot infer eye (L/R token) from filename: {img}")
                samples.append(IrisSample(
                    path=str(img.relative_to(root)),
                    identity=identity,
                    eye=eye,
                    spectrum=spectrum,
                ))
    if not samples:
        raise ManifestError(f"no images found under {root}")
    return DatasetManifest(root=root, samples=samples)
