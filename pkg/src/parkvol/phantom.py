"""Synthetic skull-stripped brain phantoms with ground-truth masks.

Each subject is an ellipsoidal "brain" of smooth background intensity
containing six parametric structures (jittered superellipsoids) at fixed
anatomical-ish positions: brainstem structures inferior on the midline,
basal ganglia as bilateral pairs, third ventricle on the midline. Disease
conditions shrink or enlarge structures through per-structure volume scale
factors, which is what makes the cohorts classifiable. No claim of
anatomical realism is made.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .io import STRUCTURES, StructureMask, Volume3D, load_nifti, save_nifti


class Condition(enum.Enum):
    NORMAL = "Normal"
    PD = "PD"
    PSP = "PSP"
    MSA_P = "MSA-P"
    MSA_C = "MSA-C"

    @classmethod
    def from_label(cls, label: str) -> "Condition":
        for c in cls:
            if c.value.lower().replace("-", "") == label.lower().replace("-", "").replace("_", ""):
                return c
        raise InvalidArgument(f"unknown condition label {label!r}")


@dataclass(frozen=True)
class AtrophyProfile:
    """Per-structure volume scale factors plus noise knobs."""

    scales: dict[str, float] = field(default_factory=dict)
    intensity_noise_sigma: float = 0.02
    shape_jitter: float = 0.03

    def __post_init__(self):
        for name, s in self.scales.items():
            if name not in STRUCTURES:
                raise InvalidArgument(f"profile names unknown structure {name!r}")
            if not 0.0 < s <= 2.0:
                raise InvalidArgument(f"scale for {name} must be in (0, 2], got {s}")
        if self.intensity_noise_sigma < 0 or self.shape_jitter < 0:
            raise InvalidArgument("noise parameters must be non-negative")

    def scale(self, structure: str) -> float:
        return self.scales.get(structure, 1.0)


# Synthetic design constants, not clinical estimates: chosen so the phantom
# cohorts reproduce the qualitative single-feature ranking (pons and the
# midbrain/pons ratio strongest for MSA-C, third ventricle and pallidum for
# PSP, putamen for MSA-P, near-chance for PD).
DEFAULT_PROFILES: dict[Condition, AtrophyProfile] = {
    Condition.NORMAL: AtrophyProfile(),
    Condition.PD: AtrophyProfile({s: 0.97 for s in STRUCTURES}),
    Condition.PSP: AtrophyProfile({"midbrain": 0.70, "third_ventricle": 1.40, "pallidum": 0.85}),
    Condition.MSA_C: AtrophyProfile({"pons": 0.65, "midbrain": 0.90}),
    Condition.MSA_P: AtrophyProfile({"putamen": 0.70, "pallidum": 0.85}),
}

# Paper-proportioned cohort, scaled to something a desk machine can train on.
DESK_COHORT_SIZES: dict[Condition, int] = {
    Condition.NORMAL: 15,
    Condition.PD: 15,
    Condition.PSP: 9,
    Condition.MSA_C: 9,
    Condition.MSA_P: 9,
}

DESK_DIMS = (64, 64, 32)
DESK_SPACING = (2.0, 2.0, 2.0)
FULL_DIMS = (256, 256, 128)
FULL_SPACING = (0.75, 0.75, 1.5)

_BRAIN_SEMI = (0.42, 0.45, 0.40)  # fractions of (h, w, d)
_BACKGROUND_BASE = 0.32
_BACKGROUND_GAIN = 0.08

# (center fractions, semi-axis fractions, intensity, bilateral x-offset).
# Semi-axes are fractions of the matching dim, so z values are thicker than
# they look at the flat desk grid. Margins leave room for scale factors up
# to 2.0 plus jitter without structures touching.
_LAYOUT = {
    "pons": ((0.50, 0.40, 0.22), (0.085, 0.085, 0.070), 0.97, None),
    "midbrain": ((0.50, 0.40, 0.44), (0.095, 0.095, 0.092), 0.88, None),
    "third_ventricle": ((0.50, 0.50, 0.70), (0.035, 0.095, 0.085), 0.12, None),
    "pallidum": ((0.50, 0.42, 0.62), (0.036, 0.055, 0.060), 0.55, 0.165),
    "putamen": ((0.50, 0.44, 0.64), (0.045, 0.080, 0.065), 0.66, 0.28),
    "caudate": ((0.50, 0.62, 0.68), (0.042, 0.070, 0.062), 0.78, 0.16),
}

# Rasterization order; earlier structures keep contested voxels (a safety
# net — the default layout never overlaps).
_RASTER_ORDER = ("pons", "midbrain", "third_ventricle", "pallidum", "putamen", "caudate")


@dataclass
class Subject:
    """One phantom case: image, six reference masks, diagnosis."""

    id: str
    volume: Volume3D
    reference_masks: dict[str, StructureMask]
    condition: Condition
    true_volumes: dict[str, float]
    seed: int = 0

    def __post_init__(self):
        missing = [s for s in STRUCTURES if s not in self.reference_masks]
        if missing:
            raise InvalidArgument(f"subject {self.id} missing masks: {missing}")


def _superellipsoid_radius(grids, center, semi, power) -> np.ndarray:
    gx, gy, gz = grids
    return (
        np.abs((gx - center[0]) / semi[0]) ** power
        + np.abs((gy - center[1]) / semi[1]) ** power
        + np.abs((gz - center[2]) / semi[2]) ** power
    )


def generate_subject(
    seed: int,
    condition: Condition,
    dims: tuple[int, int, int] = DESK_DIMS,
    profile_table: dict[Condition, AtrophyProfile] | None = None,
    spacing: tuple[float, float, float] = DESK_SPACING,
    subject_id: str | None = None,
) -> Subject:
    """Deterministically generate one phantom subject.

    Geometry jitter is seeded by (seed, dims) only, so subjects with the
    same seed differ across conditions purely by the profile's volume
    scale factors; that keeps the scale contract testable.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 32 for d in dims):
        raise InvalidArgument(f"dims must each be >= 32, got {dims}")
    profiles = DEFAULT_PROFILES if profile_table is None else profile_table
    if condition not in profiles:
        raise InvalidArgument(f"profile table has no entry for {condition}")
    profile = profiles[condition]

    h, w, d = dims
    geom_rng = np.random.default_rng([int(seed), h, w, d, 0x5EED])
    noise_rng = np.random.default_rng([int(seed), list(Condition).index(condition), h, w, d, 0x401E])

    gx, gy, gz = np.ogrid[0:h, 0:w, 0:d]
    grids = (gx.astype(np.float64), gy.astype(np.float64), gz.astype(np.float64))

    center = ((h - 1) / 2.0, (w - 1) / 2.0, (d - 1) / 2.0)
    brain_semi = (_BRAIN_SEMI[0] * h, _BRAIN_SEMI[1] * w, _BRAIN_SEMI[2] * d)
    r2 = (
        ((grids[0] - center[0]) / brain_semi[0]) ** 2
        + ((grids[1] - center[1]) / brain_semi[1]) ** 2
        + ((grids[2] - center[2]) / brain_semi[2]) ** 2
    )
    brain = r2 <= 1.0
    intensity = np.zeros(dims, dtype=np.float64)
    intensity[brain] = _BACKGROUND_BASE + _BACKGROUND_GAIN * (1.0 - r2[brain])

    jit = profile.shape_jitter
    masks: dict[str, np.ndarray] = {}
    claimed = ~brain  # structures may only claim voxels inside the brain
    for name in _RASTER_ORDER:
        (cx, cy, cz), (ax, ay, az), level, offset = _LAYOUT[name]
        # Draws below happen in a fixed order so geometry is reproducible.
        power = geom_rng.uniform(2.0, 3.0)
        semi_jit = 1.0 + geom_rng.uniform(-jit, jit, size=3)
        center_jit = geom_rng.uniform(-0.01, 0.01, size=3)
        semi = (
            max(ax * semi_jit[0], 1e-3) * h,
            max(ay * semi_jit[1], 1e-3) * w,
            max(az * semi_jit[2], 1e-3) * d,
        )
        centers = []
        if offset is None:
            centers.append(((cx + center_jit[0]) * h, (cy + center_jit[1]) * w, (cz + center_jit[2]) * d))
        else:
            for side in (-1.0, 1.0):
                centers.append((
                    (cx + side * offset + center_jit[0]) * h,
                    (cy + center_jit[1]) * w,
                    (cz + center_jit[2]) * d,
                ))
        radius = None
        for c in centers:
            r = _superellipsoid_radius(grids, c, semi, power)
            radius = r if radius is None else np.minimum(radius, r)
        # Volume scaling targets the voxel count directly: the structure is
        # the round(scale * base_count) lowest-radius free voxels, so
        # count(mask) tracks the profile factor to within half a voxel.
        base_count = int((radius <= 1.0).sum())
        target = max(1, int(round(profile.scale(name) * base_count)))
        flat = radius.ravel()
        free = ~claimed.ravel()
        order = np.argsort(np.where(free, flat, np.inf), kind="stable")[:target]
        if not free[order].all():
            raise InvalidArgument(
                f"dims {dims} too small to place structure {name!r} disjointly"
            )
        region = np.zeros(h * w * d, dtype=bool)
        region[order] = True
        region = region.reshape(dims)
        claimed |= region
        intensity[region] = level
        masks[name] = region

    sigma = profile.intensity_noise_sigma
    if sigma > 0:
        noise = noise_rng.normal(0.0, sigma, size=dims)
        intensity[brain] += noise[brain]

    voxel_mm3 = float(spacing[0] * spacing[1] * spacing[2])
    volume = Volume3D(intensity.astype(np.float32), spacing)
    ref_masks = {
        name: StructureMask(masks[name].astype(np.uint8), spacing, name) for name in STRUCTURES
    }
    true_volumes = {name: float(masks[name].sum()) * voxel_mm3 for name in STRUCTURES}
    sid = subject_id if subject_id is not None else f"{condition.value.lower().replace('-', '')}-{seed:08d}"
    return Subject(sid, volume, ref_masks, condition, true_volumes, seed=int(seed))


def generate_cohort(
    seed: int,
    sizes: dict[Condition, int],
    dims: tuple[int, int, int] = DESK_DIMS,
    profile_table: dict[Condition, AtrophyProfile] | None = None,
    spacing: tuple[float, float, float] = DESK_SPACING,
) -> list[Subject]:
    """Generate a shuffled cohort with exact per-condition counts."""
    for cond, n in sizes.items():
        if n < 0:
            raise InvalidArgument(f"negative count for {cond}")
    rng = np.random.default_rng([int(seed), 0xC0403])
    subjects: list[Subject] = []
    for cond in Condition:
        n = int(sizes.get(cond, 0))
        for j in range(n):
            sub_seed = int(rng.integers(0, 2**31 - 1))
            sid = f"{cond.value.lower().replace('-', '')}{j:03d}"
            subjects.append(
                generate_subject(sub_seed, cond, dims, profile_table, spacing, subject_id=sid)
            )
    rng.shuffle(subjects)
    return subjects


def save_cohort(subjects: list[Subject], out_dir, seed: int, extra_config: dict | None = None) -> Path:
    """Write volumes/masks as NIfTI plus a JSON manifest; returns manifest path.

    Paths inside the manifest are relative to ``out_dir``'s parent so a
    whole working directory can be moved without breaking anything.
    """
    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    mask_dir = out_dir / "masks"
    vol_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for sub in subjects:
        vol_path = vol_dir / f"{sub.id}.nii.gz"
        save_nifti(sub.volume, vol_path)
        mask_paths = {}
        for name in STRUCTURES:
            mpath = mask_dir / f"{sub.id}_{name}.nii.gz"
            save_nifti(sub.reference_masks[name], mpath)
            mask_paths[name] = str(mpath.relative_to(out_dir))
        entries.append(
            {
                "id": sub.id,
                "condition": sub.condition.value,
                "seed": sub.seed,
                "volume": str(vol_path.relative_to(out_dir)),
                "masks": mask_paths,
                "true_volumes": {k: round(v, 6) for k, v in sub.true_volumes.items()},
            }
        )

    manifest = {
        "format": "parkvol-cohort-v1",
        "seed": int(seed),
        "dims": list(subjects[0].volume.dims) if subjects else None,
        "spacing": list(subjects[0].volume.spacing) if subjects else None,
        "counts": {
            cond.value: sum(1 for s in subjects if s.condition is cond) for cond in Condition
        },
        "config": extra_config or {},
        "subjects": entries,
    }
    manifest_path = out_dir / "manifest.json"
    tmp = manifest_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(manifest_path)
    return manifest_path


def load_cohort_manifest(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "parkvol-cohort-v1":
        raise InvalidArgument(f"{manifest_path} is not a cohort manifest")
    return manifest


def load_subject(manifest_path, entry: dict) -> Subject:
    """Materialize one manifest entry from disk."""
    root = Path(manifest_path).parent
    volume = load_nifti(root / entry["volume"])
    masks = {}
    for name, rel in entry["masks"].items():
        mask = load_nifti(root / rel)
        if not isinstance(mask, StructureMask):
            mask = StructureMask(mask.data.astype(np.uint8), mask.spacing, name)
        masks[name] = mask
    return Subject(
        entry["id"],
        volume,
        masks,
        Condition.from_label(entry["condition"]),
        {k: float(v) for k, v in entry["true_volumes"].items()},
        seed=int(entry.get("seed", 0)),
    )
