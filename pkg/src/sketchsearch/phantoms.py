"""Synthetic 3-D phantom volumes with optional multi-class lesions.

Each volume is a stack of single-channel slices rendered from smooth
nested ellipses whose axes, intensities and texture vary per volume and
along the stack (an ellipsoid dome profile), so slice position is
recoverable from appearance. Diseased volumes carry 1-2 blob lesions
with concentric class rings (class ids grow toward the core), rasterized
into both the intensity image and the label grid.

Determinism: all randomness derives from numpy's PCG64 seeded with
SeedSequence((spec.seed, volume_seed, stream)) — reproducible across
platforms for a given numpy.

On-disk layout (format_version 1):
    manifest.json            spec, volume list, semantics, template flag
    <volume_id>.bin          per slice: image_size² float32 LE pixels,
                             then image_size² uint8 labels, row-major,
                             slices in order
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

_BODY_STREAM = 0
_LESION_STREAM = 1


class ValidationError(ValueError):
    """Invalid spec or dataset request."""


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int = 32
    n_slices: int = 16
    n_classes: int = 4  # background + 3 lesion classes
    body_variation: float = 0.08
    lesion_prob: float = 0.5
    lesion_size_range: tuple[float, float] = (3.0, 6.5)
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 16:
            raise ValidationError("image_size must be at least 16")
        if self.n_slices < 1:
            raise ValidationError("n_slices must be positive")
        if self.n_classes < 2:
            raise ValidationError("n_classes must be at least 2 (background + lesion)")
        if not 0.0 <= self.lesion_prob <= 1.0:
            raise ValidationError("lesion_prob must lie in [0, 1]")
        lo, hi = self.lesion_size_range
        if not (1.5 <= lo <= hi):
            raise ValidationError("lesion radii must be at least 1.5 px and ordered")
        if hi > 0.25 * self.image_size:
            raise ValidationError("max lesion radius must fit inside the body region")


@dataclass
class SliceRecord:
    pixels: np.ndarray  # (H, W) float32 in [0, 1]
    label: np.ndarray  # (H, W) uint8 class ids, 0 = background
    slice_index: int


@dataclass
class Volume:
    volume_id: str
    slices: list[SliceRecord]
    is_template: bool = False

    @property
    def semantics(self) -> str:
        return "diseased" if any(s.label.any() for s in self.slices) else "healthy"

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def pixels_array(self) -> np.ndarray:
        return np.stack([s.pixels for s in self.slices])

    def labels_array(self) -> np.ndarray:
        return np.stack([s.label for s in self.slices])


@dataclass
class Dataset:
    spec: PhantomSpec
    volumes: list[Volume]

    @property
    def template_id(self) -> str:
        for v in self.volumes:
            if v.is_template:
                return v.volume_id
        raise ValidationError("dataset has no template volume")

    def get_volume(self, volume_id: str) -> Volume:
        for v in self.volumes:
            if v.volume_id == volume_id:
                return v
        raise KeyError(volume_id)

    def iter_slices(self):
        for v in self.volumes:
            for s in v.slices:
                yield v, s

    def volumes_by_semantics(self, semantics: str) -> list[Volume]:
        return [v for v in self.volumes if v.semantics == semantics]


def _smoothstep(edge0: float, edge1: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _volume_rng(spec: PhantomSpec, volume_seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((spec.seed, volume_seed, stream)))
    )


def generate_volume(
    spec: PhantomSpec,
    volume_seed: int,
    force_semantics: str | None = None,
    volume_id: str | None = None,
) -> Volume:
    """Render one phantom volume, deterministic in (spec, volume_seed).

    ``force_semantics`` overrides the lesion_prob draw ("healthy" or
    "diseased"); used for the template volume and for test fixtures.
    """
    spec.validate()
    if force_semantics not in (None, "healthy", "diseased"):
        raise ValidationError(f"unknown semantics {force_semantics!r}")

    size = spec.n_slices
    h = w = spec.image_size
    body_rng = _volume_rng(spec, volume_seed, _BODY_STREAM)
    lesion_rng = _volume_rng(spec, volume_seed, _LESION_STREAM)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5

    # per-volume body geometry
    bv = spec.body_variation
    cx = w / 2 + body_rng.uniform(-0.03, 0.03) * w
    cy = h / 2 + body_rng.uniform(-0.03, 0.03) * h
    rx = 0.40 * w * (1.0 + bv * body_rng.uniform(-1, 1))
    ry = 0.36 * h * (1.0 + bv * body_rng.uniform(-1, 1))
    theta = body_rng.uniform(-0.3, 0.3)
    shell_val = 0.32 + 0.05 * body_rng.uniform(-1, 1)
    tissue_val = 0.20 + 0.04 * body_rng.uniform(-1, 1)
    core_val = 0.20 + 0.04 * body_rng.uniform(-1, 1)
    tex_amp = 0.03
    tex_fx, tex_fy = body_rng.uniform(1.0, 3.0, size=2)
    tex_phase = body_rng.uniform(0, 2 * np.pi)
    core_drift = body_rng.uniform(-0.15, 0.15, size=2)  # fraction of radius per unit t

    ct, st = np.cos(theta), np.sin(theta)

    # lesion plan (drawn before slice loop so healthy/diseased is a volume property)
    if force_semantics is None:
        diseased = bool(lesion_rng.random() < spec.lesion_prob)
    else:
        diseased = force_semantics == "diseased"
    lesions = _plan_lesions(spec, lesion_rng, cx, cy, rx, ry) if diseased else []

    slices: list[SliceRecord] = []
    half = (size - 1) / 2 if size > 1 else 1.0
    for z in range(size):
        t = (z - half) / (half + 0.5)
        dome = np.sqrt(max(0.25, 1.0 - 0.55 * t * t))

        dx, dy = xx - cx, yy - cy
        ux = (ct * dx + st * dy) / (rx * dome)
        uy = (-st * dx + ct * dy) / (ry * dome)
        rho = np.sqrt(ux * ux + uy * uy)

        pix = shell_val * (1.0 - _smoothstep(0.94, 1.0, rho))
        pix += tissue_val * (1.0 - _smoothstep(0.74, 0.84, rho))
        cxs = cx + core_drift[0] * rx * t
        cys = cy + core_drift[1] * ry * t
        dxc, dyc = xx - cxs, yy - cys
        uxc = (ct * dxc + st * dyc) / (0.45 * rx * dome)
        uyc = (-st * dxc + ct * dyc) / (0.45 * ry * dome)
        rho_core = np.sqrt(uxc * uxc + uyc * uyc)
        pix += core_val * (1.0 - _smoothstep(0.82, 1.0, rho_core))
        pix += tex_amp * np.cos(
            2 * np.pi * (tex_fx * xx + tex_fy * yy) / w + tex_phase + 0.7 * z
        ) * (rho < 1.0)
        pix = np.clip(pix, 0.0, 1.0)

        label = np.zeros((h, w), dtype=np.uint8)
        for les in lesions:
            _rasterize_lesion(les, z, xx, yy, pix, label)

        slices.append(
            SliceRecord(pixels=pix.astype(np.float32), label=label, slice_index=z)
        )

    vid = volume_id if volume_id is not None else f"vol{volume_seed:04d}"
    vol = Volume(volume_id=vid, slices=slices)
    if diseased and vol.semantics != "diseased":
        raise AssertionError("lesion plan rasterized no pixels")  # pragma: no cover
    return vol


def _plan_lesions(spec, rng, cx, cy, rx, ry) -> list[dict]:
    n_lesions = 1 if rng.random() < 0.7 else 2
    lesions = []
    max_class = spec.n_classes - 1
    for _ in range(n_lesions):
        r = rng.uniform(*spec.lesion_size_range)
        lx = ly = None
        for _attempt in range(12):
            # center: keep the whole blob inside ~85% of the body radius
            phi = rng.uniform(0, 2 * np.pi)
            d_max = max(0.0, 0.85 - r / min(rx, ry))
            d = rng.uniform(0.1, max(0.15, d_max))
            lx = cx + d * rx * np.cos(phi)
            ly = cy + d * ry * np.sin(phi)
            # lesions must stay disjoint blobs (wobble widens them up to ~20%)
            clear = all(
                np.hypot(lx - o["lx"], ly - o["ly"]) > 1.25 * (r + o["r"]) + 2.0
                for o in lesions
            )
            if clear:
                break
        else:
            continue  # no clear spot; settle for fewer lesions
        cz = rng.uniform(0.25, 0.75) * (spec.n_slices - 1)
        rz = rng.uniform(max(1.5, 0.15 * spec.n_slices), max(2.0, 0.35 * spec.n_slices))
        # concentric class rings: a contiguous id range, outermost first
        hi = int(rng.integers(1, max_class + 1))
        lo = int(rng.integers(1, hi + 1))
        classes = list(range(lo, hi + 1))
        lesions.append(
            dict(
                r=r, lx=lx, ly=ly, cz=cz, rz=rz, classes=classes,
                wobble_amp=rng.uniform(0.05, 0.18),
                wobble_phase=rng.uniform(0, 2 * np.pi),
                wobble_k=int(rng.integers(2, 4)),
            )
        )
    return lesions


def _rasterize_lesion(les, z, xx, yy, pix, label) -> None:
    dz = (z - les["cz"]) / les["rz"]
    if abs(dz) >= 1.0:
        return
    r_s = les["r"] * np.sqrt(1.0 - dz * dz)
    if r_s < 0.75:
        return
    dx, dy = xx - les["lx"], yy - les["ly"]
    dist = np.sqrt(dx * dx + dy * dy)
    ang = np.arctan2(dy, dx)
    wf = 1.0 + les["wobble_amp"] * np.sin(les["wobble_k"] * ang + les["wobble_phase"])
    rho = dist / (r_s * wf)
    inside = rho <= 1.0
    if not inside.any():
        return
    classes = les["classes"]
    m = len(classes)
    # ring i (outer -> inner) covers rho in ((m-1-i)/m, (m-i)/m]
    ring = np.minimum((m * (1.0 - rho)).astype(int), m - 1)
    ring = np.where(inside, ring, -1)
    for i, cls in enumerate(classes):
        sel = ring == i
        if sel.any():
            label[sel] = cls
    # brightness grows toward the core; floor keeps every labeled pixel
    # measurably different from the lesion-free render
    profile = np.clip(1.15 - 0.85 * rho, 0.3, 1.0)
    bump = (0.22 + 0.16 * ring.clip(min=0) / max(m - 1, 1)) * profile
    pix[inside] = np.clip(pix[inside] + bump[inside], 0.0, 0.98)


def generate_dataset(spec: PhantomSpec, n_volumes: int) -> Dataset:
    """Deterministic dataset with exactly one all-healthy template volume."""
    spec.validate()
    if n_volumes < 2:
        raise ValidationError("need at least 2 volumes (template + references)")
    volumes = []
    for idx in range(n_volumes):
        force = "healthy" if idx == 0 else None
        vol = generate_volume(spec, idx, force_semantics=force)
        vol.is_template = idx == 0
        volumes.append(vol)
    return Dataset(spec=spec, volumes=volumes)


# ---------------------------------------------------------------------------
# on-disk layout


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for vol in dataset.volumes:
        fname = f"{vol.volume_id}.bin"
        with open(out / fname, "wb") as f:
            for s in vol.slices:
                f.write(np.ascontiguousarray(s.pixels, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(s.label, dtype=np.uint8).tobytes())
        entries.append(
            {
                "volume_id": vol.volume_id,
                "file": fname,
                "semantics": vol.semantics,
                "is_template": vol.is_template,
                "n_slices": vol.n_slices,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": _spec_to_dict(dataset.spec),
        "template_volume_id": dataset.template_id,
        "volumes": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported dataset format in {root}")
    spec = _spec_from_dict(manifest["spec"])
    size = spec.image_size
    slice_bytes = size * size * 4 + size * size
    volumes = []
    for entry in manifest["volumes"]:
        raw = (root / entry["file"]).read_bytes()
        if len(raw) != slice_bytes * entry["n_slices"]:
            raise ValidationError(f"truncated volume file {entry['file']}")
        slices = []
        for i in range(entry["n_slices"]):
            off = i * slice_bytes
            pix = np.frombuffer(raw, dtype="<f4", count=size * size, offset=off)
            lab = np.frombuffer(
                raw, dtype=np.uint8, count=size * size, offset=off + size * size * 4
            )
            slices.append(
                SliceRecord(
                    pixels=pix.reshape(size, size).copy(),
                    label=lab.reshape(size, size).copy(),
                    slice_index=i,
                )
            )
        volumes.append(
            Volume(
                volume_id=entry["volume_id"],
                slices=slices,
                is_template=entry["is_template"],
            )
        )
    return Dataset(spec=spec, volumes=volumes)


def dataset_hash(path: str | Path) -> str:
    """sha256 over the manifest and every volume file, in manifest order."""
    root = Path(path)
    h = hashlib.sha256()
    manifest_bytes = (root / "manifest.json").read_bytes()
    h.update(manifest_bytes)
    manifest = json.loads(manifest_bytes)
    for entry in manifest["volumes"]:
        h.update((root / entry["file"]).read_bytes())
    return h.hexdigest()


def _spec_to_dict(spec: PhantomSpec) -> dict:
    d = asdict(spec)
    d["lesion_size_range"] = list(spec.lesion_size_range)
    return d


def _spec_from_dict(d: dict) -> PhantomSpec:
    d = dict(d)
    d["lesion_size_range"] = tuple(d["lesion_size_range"])
    return PhantomSpec(**d)


@dataclass
class OnDemandVolumes:
    """Dataset-shaped provider that renders volumes lazily with a small cache.

    Useful when only a handful of the volumes are ever touched (e.g. the
    service returning thumbnails for top-k results over a huge corpus).
    """

    spec: PhantomSpec
    n_volumes: int
    cache_size: int = 32
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.spec.validate()
        if self.n_volumes < 2:
            raise ValidationError("need at least 2 volumes")

    @property
    def template_id(self) -> str:
        return "vol0000"

    def volume_ids(self) -> list[str]:
        return [f"vol{i:04d}" for i in range(self.n_volumes)]

    def get_volume(self, volume_id: str) -> Volume:
        if volume_id in self._cache:
            return self._cache[volume_id]
        idx = int(volume_id[3:])
        if not 0 <= idx < self.n_volumes:
            raise KeyError(volume_id)
        force = "healthy" if idx == 0 else None
        vol = generate_volume(self.spec, idx, force_semantics=force)
        vol.is_template = idx == 0
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[volume_id] = vol
        return vol
