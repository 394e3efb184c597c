"""Procedural part-composed shapes, open-set task builders and cloud file I/O.

Shapes are unions of surface primitives (boxes, cylinders, disks, sphere
caps) whose sizes and poses are drawn per instance. The up axis is z.

Split layout per protocol:

* ``single``: train = known classes; test = known classes + unknown classes
  from the same generator profile.
* ``cross``: as ``single`` but unknown test samples come from a shifted
  generator profile (heavier jitter, occlusion crop, anisotropic scale).
* ``confusing_mixup``: test unknowns are rigid subset mixes of two known
  samples of different classes.

Labels are 1..K for known classes (in ``TaskSpec.known_classes`` order) and
K+1 for anything unknown.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_POINTS = 512
DEFAULT_MIX_RADIUS = 0.4


class ShapeGenerationError(ValueError):
    pass


class TaskConfigError(ValueError):
    pass


class CloudFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    points: np.ndarray
    part_ids: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be L x 3, got {self.points.shape}")

    @property
    def L(self) -> int:
        return self.points.shape[0]


@dataclass
class LabeledSample:
    cloud: PointCloud
    label: int
    source_domain: str


@dataclass
class TaskSpec:
    protocol: str
    known_classes: list[str]
    unknown_classes: list[str]
    n_train_per_class: int = 40
    n_test_per_class: int = 20
    seed: int = 0
    n_points: int = DEFAULT_POINTS
    mix_radius: float = DEFAULT_MIX_RADIUS
    n_mixed: int | None = None

    def __post_init__(self):
        if self.protocol not in ("single", "cross", "confusing_mixup"):
            raise TaskConfigError(f"unknown protocol {self.protocol!r}")
        overlap = set(self.known_classes) & set(self.unknown_classes)
        if overlap:
            raise TaskConfigError(f"classes both known and unknown: {sorted(overlap)}")
        if not self.known_classes:
            raise TaskConfigError("at least one known class is required")
        if self.n_train_per_class <= 0 or self.n_test_per_class <= 0:
            raise TaskConfigError("split sizes must be positive")
        if self.protocol != "confusing_mixup" and not self.unknown_classes:
            raise TaskConfigError(f"protocol {self.protocol!r} needs unknown classes")

    @property
    def K(self) -> int:
        return len(self.known_classes)


@dataclass(frozen=True)
class DomainProfile:
    """Generator settings applied after part sampling."""

    name: str
    jitter: float = 0.01
    crop_fraction: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)


TRAIN_PROFILE = DomainProfile("synthetic")
SHIFTED_PROFILE = DomainProfile("shifted", jitter=0.03, crop_fraction=0.3, scale_range=(0.6, 1.4))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def _frame(axis: str) -> np.ndarray:
    """Rows map local (u, v, w) to world, with w along ``axis``."""
    w = _AXES[axis]
    u, v = [i for i in range(3) if i != w]
    m = np.zeros((3, 3))
    m[0, u] = m[1, v] = m[2, w] = 1.0
    return m


@dataclass
class Primitive:
    """A surface patch. ``size`` meaning depends on ``kind``:

    box: half extents (hx, hy, hz); cylinder: (radius, height); disk: (radius,);
    cap: (sphere radius, cap height). ``axis`` orients cylinders, disks and caps,
    ``sign`` picks which pole a cap sits on.
    """

    kind: str
    center: np.ndarray
    size: tuple[float, ...]
    axis: str = "z"
    sign: float = 1.0
    capped: bool = True

    def area(self) -> float:
        if self.kind == "box":
            a, b, c = (2 * s for s in self.size)
            return 2 * (a * b + b * c + a * c)
        if self.kind == "cylinder":
            r, h = self.size
            return 2 * math.pi * r * h + (2 * math.pi * r * r if self.capped else 0.0)
        if self.kind == "disk":
            return math.pi * self.size[0] ** 2
        if self.kind == "cap":
            R, h = self.size
            return 2 * math.pi * R * h
        raise ShapeGenerationError(f"unknown primitive kind {self.kind!r}")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.zeros((0, 3))
        c = np.asarray(self.center, dtype=np.float64)
        if self.kind == "box":
            return c + _sample_box(np.asarray(self.size), n, rng)
        frame = _frame(self.axis)
        if self.kind == "cylinder":
            local = _sample_cylinder(*self.size, self.capped, n, rng)
        elif self.kind == "disk":
            local = _sample_disk(self.size[0], n, rng)
        elif self.kind == "cap":
            local = _sample_cap(*self.size, n, rng)
            local[:, 2] *= self.sign
        else:
            raise ShapeGenerationError(f"unknown primitive kind {self.kind!r}")
        return c + local @ frame

    def surface_distance(self, q: np.ndarray) -> np.ndarray:
        """Unsigned distance from points ``q`` to a box surface (box only)."""
        if self.kind != "box":
            raise NotImplementedError("surface_distance is implemented for boxes")
        d = np.abs(q - np.asarray(self.center)) - np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(np.max(d, axis=1), 0.0)
        return np.where(np.all(d <= 0, axis=1), -inside, outside)


def _sample_box(half: np.ndarray, n: int, rng) -> np.ndarray:
    hx, hy, hz = half
    face_areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _sample_disk(r: float, n: int, rng) -> np.ndarray:
    rad = r * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([rad * np.cos(th), rad * np.sin(th), np.zeros(n)], axis=1)


def _sample_cylinder(r: float, h: float, capped: bool, n: int, rng) -> np.ndarray:
    side = 2 * np.pi * r * h
    cap = np.pi * r * r if capped else 0.0
    which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    th = rng.uniform(0, 2 * np.pi, size=n)
    z = rng.uniform(-h / 2, h / 2, size=n)
    rad = np.full(n, r)
    on_cap = which > 0
    rad[on_cap] = r * np.sqrt(rng.uniform(size=on_cap.sum()))
    z[which == 1] = h / 2
    z[which == 2] = -h / 2
    return np.stack([rad * np.cos(th), rad * np.sin(th), z], axis=1)


def _sample_cap(R: float, h: float, n: int, rng) -> np.ndarray:
    # sphere area is uniform in height (Archimedes)
    z = rng.uniform(R - h, R, size=n)
    th = rng.uniform(0, 2 * np.pi, size=n)
    rho = np.sqrt(np.maximum(R * R - z * z, 0.0))
    return np.stack([rho * np.cos(th), rho * np.sin(th), z - (R - h / 2)], axis=1)


# ---------------------------------------------------------------------------
# shape families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeFamily:
    name: str
    recipe: Callable[[np.random.Generator], list[tuple[str, Primitive]]] = field(repr=False)

    def realize(self, rng: np.random.Generator) -> list[tuple[str, Primitive]]:
        parts = self.recipe(rng)
        kinds = {p.kind for _, p in parts}
        if len(parts) < 2 or len(kinds) < 2:
            raise ShapeGenerationError(f"{self.name}: a family needs two or more distinct primitive parts")
        return parts


def _legs(rng, xs, ys, top, radius, name="leg"):
    out = []
    for x in xs:
        for y in ys:
            out.append((name, Primitive("cylinder", np.array([x, y, top / 2]), (radius, top))))
    return out


def _table(rng):
    w, d = rng.uniform(0.55, 0.75), rng.uniform(0.35, 0.5)
    h = rng.uniform(0.65, 0.8)
    t = rng.uniform(0.03, 0.05)
    inset = rng.uniform(0.04, 0.08)
    parts = [("top", Primitive("box", np.array([0, 0, h]), (w, d, t / 2)))]
    parts += _legs(rng, (-w + inset, w - inset), (-d + inset, d - inset), h - t / 2, rng.uniform(0.025, 0.04))
    return parts


def _chair(rng):
    w = rng.uniform(0.22, 0.3)
    seat_h = rng.uniform(0.4, 0.5)
    back_h = rng.uniform(0.45, 0.6)
    t = rng.uniform(0.025, 0.04)
    parts = [
        ("seat", Primitive("box", np.array([0, 0, seat_h]), (w, w, t))),
        ("back", Primitive("box", np.array([0, -w + t, seat_h + back_h / 2]), (w, t, back_h / 2))),
    ]
    parts += _legs(rng, (-w + 0.03, w - 0.03), (-w + 0.03, w - 0.03), seat_h - t, rng.uniform(0.015, 0.025))
    return parts


def _lamp(rng):
    base_r = rng.uniform(0.15, 0.22)
    pole_h = rng.uniform(0.8, 1.1)
    shade_R = rng.uniform(0.22, 0.3)
    return [
        ("base", Primitive("cylinder", np.array([0, 0, 0.02]), (base_r, 0.04))),
        ("pole", Primitive("cylinder", np.array([0, 0, pole_h / 2]), (0.02, pole_h), capped=False)),
        ("shade", Primitive("cap", np.array([0, 0, pole_h]), (shade_R, shade_R * rng.uniform(0.6, 0.9)))),
    ]


def _airplane(rng):
    length = rng.uniform(1.4, 1.8)
    r = rng.uniform(0.07, 0.1)
    span = rng.uniform(0.6, 0.8)
    chord = rng.uniform(0.12, 0.18)
    tail_x = -length / 2 + 0.1
    return [
        ("fuselage", Primitive("cylinder", np.array([0, 0, 0]), (r, length), axis="x")),
        ("nose", Primitive("cap", np.array([length / 2, 0, 0]), (r, r), axis="x")),
        ("wing", Primitive("box", np.array([rng.uniform(-0.05, 0.1), 0, 0]), (chord, span, 0.015))),
        ("stabilizer", Primitive("box", np.array([tail_x, 0, 0]), (0.07, span * 0.35, 0.012))),
        ("fin", Primitive("box", np.array([tail_x, 0, 0.15]), (0.07, 0.012, rng.uniform(0.12, 0.18)))),
    ]


def _mug(rng):
    r = rng.uniform(0.22, 0.3)
    h = rng.uniform(0.45, 0.65)
    return [
        ("body", Primitive("cylinder", np.array([0, 0, h / 2]), (r, h), capped=False)),
        ("bottom", Primitive("disk", np.array([0, 0, 0]), (r,))),
        ("handle", Primitive("cylinder", np.array([r + 0.09, 0, h / 2]), (0.1, 0.04), axis="y", capped=False)),
    ]


def _bed(rng):
    L, W = rng.uniform(0.9, 1.1), rng.uniform(0.6, 0.75)
    mh = rng.uniform(0.12, 0.18)
    leg = rng.uniform(0.08, 0.14)
    head = rng.uniform(0.35, 0.5)
    parts = [
        ("mattress", Primitive("box", np.array([0, 0, leg + mh]), (L, W, mh))),
        ("headboard", Primitive("box", np.array([-L - 0.03, 0, (leg + head) / 2 + 0.1]), (0.03, W, head))),
    ]
    parts += _legs(rng, (-L + 0.05, L - 0.05), (-W + 0.05, W - 0.05), leg, 0.04)
    return parts


def _bookshelf(rng):
    w = rng.uniform(0.35, 0.5)
    d = rng.uniform(0.15, 0.22)
    h = rng.uniform(0.9, 1.2)
    n_shelves = int(rng.integers(3, 6))
    t = 0.02
    parts = [
        ("side", Primitive("box", np.array([-w, 0, h / 2 + 0.05]), (t, d, h / 2))),
        ("side", Primitive("box", np.array([w, 0, h / 2 + 0.05]), (t, d, h / 2))),
        ("back", Primitive("box", np.array([0, -d, h / 2 + 0.05]), (w, t / 2, h / 2))),
    ]
    for z in np.linspace(0.05, h + 0.05, n_shelves):
        parts.append(("shelf", Primitive("box", np.array([0, 0, z]), (w, d, t / 2))))
    parts += _legs(rng, (-w, w), (-d + 0.02, d - 0.02), 0.05, 0.02, name="foot")
    return parts


def _stool(rng):
    r = rng.uniform(0.16, 0.22)
    h = rng.uniform(0.5, 0.7)
    spread = r * rng.uniform(0.6, 0.8)
    parts = [("seat", Primitive("cylinder", np.array([0, 0, h]), (r, 0.05)))]
    for k in range(3):
        a = 2 * np.pi * k / 3
        parts.append(("leg", Primitive("cylinder", np.array([spread * np.cos(a), spread * np.sin(a), h / 2]), (0.02, h))))
    parts.append(("ring", Primitive("disk", np.array([0, 0, h * 0.35]), (spread,))))
    return parts


def _bottle(rng):
    r = rng.uniform(0.12, 0.17)
    h = rng.uniform(0.5, 0.7)
    neck_h = rng.uniform(0.15, 0.25)
    neck_r = r * rng.uniform(0.3, 0.4)
    shoulder = r * 0.8
    return [
        ("body", Primitive("cylinder", np.array([0, 0, h / 2]), (r, h))),
        ("shoulder", Primitive("cap", np.array([0, 0, h + shoulder / 2]), (r, shoulder))),
        ("neck", Primitive("cylinder", np.array([0, 0, h + shoulder + neck_h / 2]), (neck_r, neck_h))),
    ]


def _bench(rng):
    L = rng.uniform(0.8, 1.0)
    d = rng.uniform(0.15, 0.2)
    h = rng.uniform(0.35, 0.45)
    panel_t = 0.03
    return [
        ("seat", Primitive("box", np.array([0, 0, h]), (L, d, 0.025))),
        ("support", Primitive("box", np.array([-L + 0.1, 0, h / 2]), (panel_t, d * 0.9, h / 2))),
        ("support", Primitive("box", np.array([L - 0.1, 0, h / 2]), (panel_t, d * 0.9, h / 2))),
        ("brace", Primitive("cylinder", np.array([0, 0, h * 0.3]), (0.02, 2 * (L - 0.1)), axis="x")),
    ]


CATALOG: dict[str, ShapeFamily] = {
    f.name: f
    for f in (
        ShapeFamily("table", _table),
        ShapeFamily("chair", _chair),
        ShapeFamily("lamp", _lamp),
        ShapeFamily("airplane", _airplane),
        ShapeFamily("mug", _mug),
        ShapeFamily("bed", _bed),
        ShapeFamily("bookshelf", _bookshelf),
        ShapeFamily("stool", _stool),
        ShapeFamily("bottle", _bottle),
        ShapeFamily("bench", _bench),
    )
}


def get_family(name: str) -> ShapeFamily:
    try:
        return CATALOG[name]
    except KeyError:
        raise TaskConfigError(f"unknown shape family {name!r}; known: {sorted(CATALOG)}") from None


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass
class ShapeSample:
    """A generated cloud plus what is needed to map primitives into its frame."""

    cloud: PointCloud
    parts: list[tuple[str, Primitive]]
    angle: float
    axis_scale: np.ndarray
    centroid: np.ndarray
    scale: float

    def to_primitive_frame(self, points: np.ndarray) -> np.ndarray:
        raw = points * self.scale + self.centroid
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return (raw @ rot) / self.axis_scale


def normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Centre on the centroid and scale so the farthest point has norm 1."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale <= 0:
        raise ShapeGenerationError("cannot normalise a cloud with zero extent")
    out = centered / scale
    # second pass removes the centroid residue left by the division
    out -= out.mean(axis=0)
    return out, centroid, scale


def is_normalized(points: np.ndarray, tol: float = 1e-6) -> bool:
    centroid_ok = np.all(np.abs(points.mean(axis=0)) <= tol)
    return bool(centroid_ok and abs(np.max(np.linalg.norm(points, axis=1)) - 1.0) <= tol)


def _family_rng(family: ShapeFamily, seed: int) -> np.random.Generator:
    return np.random.default_rng([zlib.crc32(family.name.encode()), int(seed)])


def sample_shape(family: ShapeFamily, seed: int, L: int = DEFAULT_POINTS,
                 profile: DomainProfile = TRAIN_PROFILE) -> ShapeSample:
    if L < 64:
        raise ShapeGenerationError(f"need at least 64 points, got {L}")
    rng = _family_rng(family, seed)
    parts = family.realize(rng)
    areas = np.array([p.area() for _, p in parts])
    if not np.isfinite(areas.sum()) or areas.sum() <= 0:
        raise ShapeGenerationError(f"{family.name}: recipe has zero total area")

    n_raw = L if profile.crop_fraction == 0 else int(math.ceil(L / (1 - profile.crop_fraction))) + 8
    owner = rng.choice(len(parts), size=n_raw, p=areas / areas.sum())
    pts = np.zeros((n_raw, 3))
    for i, (_, prim) in enumerate(parts):
        sel = owner == i
        pts[sel] = prim.sample(int(sel.sum()), rng)

    lo, hi = profile.scale_range
    axis_scale = rng.uniform(lo, hi, size=3) if hi > lo else np.ones(3)
    pts = pts * axis_scale
    pts = pts + rng.normal(0.0, profile.jitter, size=pts.shape)
    angle = float(rng.uniform(0, 2 * np.pi))
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = pts @ rot.T

    if profile.crop_fraction > 0:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        order = np.argsort(pts @ direction, kind="stable")
        keep = order[: n_raw - int(profile.crop_fraction * n_raw)]
        keep = np.sort(rng.choice(keep, size=L, replace=False))
        pts, owner = pts[keep], owner[keep]

    normed, centroid, scale = normalize_points(pts)
    return ShapeSample(PointCloud(normed, owner), parts, angle, axis_scale, centroid, scale)


def generate_shape(family: ShapeFamily, seed: int, L: int = DEFAULT_POINTS,
                   profile: DomainProfile = TRAIN_PROFILE) -> PointCloud:
    """Deterministic cloud for ``(family, seed, L, profile)``."""
    return sample_shape(family, seed, L, profile).cloud


# ---------------------------------------------------------------------------
# rigid subset mix
# ---------------------------------------------------------------------------

def rigid_subset_mix(a: PointCloud, b: PointCloud, radius: float = DEFAULT_MIX_RADIUS,
                     seed: int = 0, max_retries: int = 10) -> PointCloud:
    """Transplant the ball of ``a`` around a random anchor into ``b``.

    The |A| points of ``b`` nearest the anchor are overwritten in place by the
    ball's points, so the result keeps ``b``'s cardinality and every output
    point is an exact copy of a point of ``a`` or ``b``. No renormalisation.
    """
    if a.L != b.L:
        raise ValueError(f"clouds must have equal size, got {a.L} and {b.L}")
    if not 0 < radius < 1:
        raise ValueError(f"radius must be in (0, 1), got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries + 1):
        anchor = a.points[rng.integers(a.L)]
        dist_a = np.linalg.norm(a.points - anchor, axis=1)
        ball = np.flatnonzero(dist_a < radius)
        if ball.size > 0:
            break
    else:
        raise ShapeGenerationError("rigid_subset_mix: empty subset after retries")
    ball = ball[np.argsort(dist_a[ball], kind="stable")]
    dist_b = np.linalg.norm(b.points - anchor, axis=1)
    replaced = np.argsort(dist_b, kind="stable")[: ball.size]
    out = b.points.copy()
    out[replaced] = a.points[ball]
    return PointCloud(out)


# ---------------------------------------------------------------------------
# task builders
# ---------------------------------------------------------------------------

def _sample_seed(task_seed: int, *keys) -> int:
    mixed = [int(task_seed)] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(mixed).generate_state(1)[0])


def _make_samples(families: Sequence[str], per_class: int, split: str, spec: TaskSpec,
                  labels: Sequence[int], profile: DomainProfile) -> list[LabeledSample]:
    out = []
    for name, label in zip(families, labels):
        fam = get_family(name)
        for i in range(per_class):
            seed = _sample_seed(spec.seed, split, profile.name, name, i)
            out.append(LabeledSample(generate_shape(fam, seed, spec.n_points, profile), label, profile.name))
    return out


def choose_classes(K: int, U: int, seed: int, catalog: Sequence[str] | None = None) -> tuple[list[str], list[str]]:
    """Randomly split the catalog into K known and U unknown class names."""
    names = sorted(catalog if catalog is not None else CATALOG)
    if len(names) < K + U:
        raise TaskConfigError(f"catalog has {len(names)} families, need {K + U}")
    order = np.random.default_rng(seed).permutation(len(names))
    return [names[i] for i in order[:K]], [names[i] for i in order[K:K + U]]


def _check_catalog(spec: TaskSpec, catalog: Sequence[str]):
    missing = [c for c in list(spec.known_classes) + list(spec.unknown_classes) if c not in catalog]
    if missing:
        raise TaskConfigError(f"classes not in catalog: {missing}")


def build_single_task(spec: TaskSpec, catalog: Sequence[str] | None = None):
    catalog = list(catalog if catalog is not None else CATALOG)
    _check_catalog(spec, catalog)
    K = spec.K
    known_labels = range(1, K + 1)
    train = _make_samples(spec.known_classes, spec.n_train_per_class, "train", spec, known_labels, TRAIN_PROFILE)
    test = _make_samples(spec.known_classes, spec.n_test_per_class, "test", spec, known_labels, TRAIN_PROFILE)
    test += _make_samples(spec.unknown_classes, spec.n_test_per_class, "test", spec,
                          [K + 1] * len(spec.unknown_classes), TRAIN_PROFILE)
    return train, test


def build_cross_task(train_catalog: Sequence[str], unknown_catalog: Sequence[str], spec: TaskSpec,
                     unknown_profile: DomainProfile = SHIFTED_PROFILE):
    if not set(spec.known_classes) <= set(train_catalog):
        raise TaskConfigError("known classes must come from the training catalog")
    if not set(spec.unknown_classes) <= set(unknown_catalog):
        raise TaskConfigError("unknown classes must come from the unknown catalog")
    if unknown_profile.name == TRAIN_PROFILE.name:
        raise TaskConfigError("unknown profile must differ from the training profile")
    K = spec.K
    known_labels = range(1, K + 1)
    train = _make_samples(spec.known_classes, spec.n_train_per_class, "train", spec, known_labels, TRAIN_PROFILE)
    test = _make_samples(spec.known_classes, spec.n_test_per_class, "test", spec, known_labels, TRAIN_PROFILE)
    test += _make_samples(spec.unknown_classes, spec.n_test_per_class, "test", spec,
                          [K + 1] * len(spec.unknown_classes), unknown_profile)
    return train, test


def build_mixup_task(spec: TaskSpec, catalog: Sequence[str] | None = None):
    """Known singles plus rigid mixes of two different known classes as unknowns."""
    catalog = list(catalog if catalog is not None else CATALOG)
    _check_catalog(spec, catalog)
    K = spec.K
    if K < 2:
        raise TaskConfigError("confusing mixup needs at least two known classes")
    known_labels = range(1, K + 1)
    train = _make_samples(spec.known_classes, spec.n_train_per_class, "train", spec, known_labels, TRAIN_PROFILE)
    test = _make_samples(spec.known_classes, spec.n_test_per_class, "test", spec, known_labels, TRAIN_PROFILE)
    n_mixed = spec.n_mixed if spec.n_mixed is not None else K * spec.n_test_per_class
    rng = np.random.default_rng(_sample_seed(spec.seed, "mix-pairs"))
    for i in range(n_mixed):
        ca, cb = rng.choice(K, size=2, replace=False)
        fa, fb = get_family(spec.known_classes[ca]), get_family(spec.known_classes[cb])
        a = generate_shape(fa, _sample_seed(spec.seed, "mix-a", i), spec.n_points)
        b = generate_shape(fb, _sample_seed(spec.seed, "mix-b", i), spec.n_points)
        mixed = rigid_subset_mix(a, b, spec.mix_radius, seed=_sample_seed(spec.seed, "mix-anchor", i))
        normed, _, _ = normalize_points(mixed.points)
        test.append(LabeledSample(PointCloud(normed), K + 1, "mixup"))
    return train, test


def build_task(spec: TaskSpec):
    if spec.protocol == "single":
        return build_single_task(spec)
    if spec.protocol == "cross":
        return build_cross_task(list(CATALOG), list(CATALOG), spec)
    return build_mixup_task(spec)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_cloud_file(path: str | Path, cloud: PointCloud) -> None:
    lines = [f"PCV1 {cloud.L}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud_file(path: str | Path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CloudFormatError("empty file", 1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != "PCV1" or not head[1].isdigit():
        raise CloudFormatError(f"malformed header {lines[0]!r}", 1)
    n = int(head[1])
    body = [ln for ln in lines[1:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n:
        raise CloudFormatError(f"header declares {n} points but body has {len(body)}", len(body) + 1)
    pts = np.empty((n, 3))
    for i, ln in enumerate(body):
        fields = ln.split()
        if len(fields) != 3:
            raise CloudFormatError(f"expected 3 coordinates, got {len(fields)}", i + 2)
        try:
            vals = [float(v) for v in fields]
        except ValueError:
            raise CloudFormatError(f"unparseable coordinate in {ln!r}", i + 2) from None
        if not all(math.isfinite(v) for v in vals):
            raise CloudFormatError(f"non-finite coordinate in {ln!r}", i + 2)
        pts[i] = vals
    return PointCloud(pts)


def write_manifest(directory: str | Path, name: str, samples: Sequence[LabeledSample], K: int) -> Path:
    """Write each cloud to ``<dir>/<name>/NNNNN.pcv`` and a JSON manifest beside them."""
    directory = Path(directory)
    cloud_dir = directory / name
    cloud_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        rel = f"{name}/{i:05d}.pcv"
        write_cloud_file(directory / rel, s.cloud)
        entries.append({"path": rel, "label": int(s.label), "domain": s.source_domain})
    manifest = directory / f"{name}.json"
    manifest.write_text(json.dumps({"samples": entries, "K": int(K)}, indent=1) + "\n")
    return manifest


def read_manifest(path: str | Path) -> tuple[list[LabeledSample], int]:
    path = Path(path)
    doc = json.loads(path.read_text())
    try:
        K = int(doc["K"])
        rows = doc["samples"]
    except (KeyError, TypeError) as exc:
        raise TaskConfigError(f"{path}: manifest needs 'samples' and 'K'") from exc
    samples = []
    for row in rows:
        label = int(row["label"])
        if not 1 <= label <= K + 1:
            raise TaskConfigError(f"{path}: label {label} outside 1..{K + 1}")
        cloud = read_cloud_file(path.parent / row["path"])
        samples.append(LabeledSample(cloud, label, row.get("domain", "external")))
    return samples, K
