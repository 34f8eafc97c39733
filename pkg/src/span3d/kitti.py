"""KITTI label/calibration I/O, projection deviation statistics, synthetic scenes."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from span3d.errors import (
    BehindCameraError,
    ConfigError,
    EmptyStatsError,
    InvalidArgumentError,
    ParseError,
)
from span3d.geom3d import Box3D, CameraIntrinsics
from span3d.losses import Rect2D, projected_enclosing_rect

log = logging.getLogger(__name__)

BIN_WIDTH = 0.25
EDGE_NAMES = ("du_min", "du_max", "dv_min", "dv_max")
KITTI_P2 = CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854)


@dataclass(frozen=True)
class LabelRecord:
    category: str
    truncation: float
    occlusion: int
    alpha: float
    rect: Rect2D
    h: float
    w: float
    l: float
    location: tuple
    ry: float
    score: float | None = None

    @property
    def has_box(self) -> bool:
        return self.category != "DontCare" and self.h > 0 and self.w > 0 and self.l > 0


def _fmt(v: float) -> str:
    return repr(float(v))


def parse_label_file(text: str) -> list:
    """Parse KITTI ``label_2`` text (15 fields per line, 16 with a score)."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", line=lineno)
        try:
            nums = [float(x) for x in fields[1:]]
            occlusion = int(float(fields[2]))
            rect = Rect2D(nums[3], nums[5], nums[4], nums[6])
        except (ValueError, InvalidArgumentError) as e:
            raise ParseError(str(e), line=lineno) from None
        records.append(
            LabelRecord(
                category=fields[0],
                truncation=nums[0],
                occlusion=occlusion,
                alpha=nums[2],
                rect=rect,
                h=nums[7],
                w=nums[8],
                l=nums[9],
                location=(nums[10], nums[11], nums[12]),
                ry=nums[13],
                score=nums[14] if len(nums) == 15 else None,
            )
        )
    return records


def serialize_labels(records: Iterable[LabelRecord]) -> str:
    lines = []
    for r in records:
        vals = [
            r.category,
            _fmt(r.truncation),
            str(r.occlusion),
            _fmt(r.alpha),
            _fmt(r.rect.umin),
            _fmt(r.rect.vmin),
            _fmt(r.rect.umax),
            _fmt(r.rect.vmax),
            _fmt(r.h),
            _fmt(r.w),
            _fmt(r.l),
            *(_fmt(c) for c in r.location),
            _fmt(r.ry),
        ]
        if r.score is not None:
            vals.append(_fmt(r.score))
        lines.append(" ".join(vals))
    return "".join(line + "\n" for line in lines)


def parse_calib(text: str) -> CameraIntrinsics:
    """Intrinsics from the ``P2:`` row; its translation column is ignored."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        key, sep, rest = line.partition(":")
        if not sep or key.strip() != "P2":
            continue
        try:
            vals = [float(x) for x in rest.split()]
        except ValueError as e:
            raise ParseError(f"P2 row: {e}", line=lineno) from None
        if len(vals) != 12:
            raise ParseError(f"P2 row needs 12 numbers, got {len(vals)}", line=lineno)
        P = np.array(vals).reshape(3, 4)
        try:
            return CameraIntrinsics(P[0, 0], P[1, 1], P[0, 2], P[1, 2])
        except InvalidArgumentError as e:
            raise ParseError(f"P2 row: {e}", line=lineno) from None
    raise ParseError("no P2 row in calibration file")


def label_to_box(rec: LabelRecord) -> Box3D | None:
    """Geometric-center box for a label, or None for DontCare/sentinel dims.

    KITTI anchors the location at the bottom-face center; with y pointing
    down the center sits h/2 above it.
    """
    if not rec.has_box:
        return None
    x, y, z = rec.location
    return Box3D(x, y - rec.h / 2.0, z, rec.l, rec.h, rec.w, rec.ry)


def box_to_label(
    box: Box3D,
    rect: Rect2D,
    category: str = "Car",
    truncation: float = 0.0,
    occlusion: int = 0,
    alpha: float | None = None,
) -> LabelRecord:
    if alpha is None:
        alpha = box.ry - math.atan2(box.cx, box.cz)
    return LabelRecord(
        category=category,
        truncation=truncation,
        occlusion=occlusion,
        alpha=alpha,
        rect=rect,
        h=box.h,
        w=box.w,
        l=box.l,
        location=(box.cx, box.cy + box.h / 2.0, box.cz),
        ry=box.ry,
    )


# -- deviation statistics ----------------------------------------------------------


@dataclass(frozen=True)
class DeviationFilters:
    """Which labels enter the deviation statistics.

    ``categories=None`` keeps every category except DontCare. Truncated
    objects are dropped by default because image-border clipping changes the
    2D box.
    """

    max_truncation: float = 0.0
    max_occlusion: int = 3
    categories: tuple | None = None

    def accepts(self, rec: LabelRecord) -> bool:
        if not rec.has_box:
            return False
        if self.categories is not None and rec.category not in self.categories:
            return False
        return rec.truncation <= self.max_truncation and rec.occlusion <= self.max_occlusion


@dataclass
class EdgeHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    min: float
    max: float


@dataclass
class DeviationStats:
    n: int
    edges: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "bin_width": BIN_WIDTH,
            "edges": {
                name: {"mean": h.mean, "std": h.std, "min": h.min, "max": h.max}
                for name, h in self.edges.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("edge", "bin_lo", "bin_hi", "count"))
        for name, h in self.edges.items():
            for lo, hi, c in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts):
                w.writerow((name, repr(float(lo)), repr(float(hi)), int(c)))
        return buf.getvalue()


def deviation_samples(
    records: Iterable[LabelRecord],
    K: CameraIntrinsics,
    filters: DeviationFilters = DeviationFilters(),
) -> np.ndarray:
    """(N, 4) projected-extreme minus 2D-box-edge, columns as ``EDGE_NAMES``."""
    rows = []
    for rec in records:
        if not filters.accepts(rec):
            continue
        box = label_to_box(rec)
        try:
            proj = projected_enclosing_rect(box, K)
        except BehindCameraError:
            continue
        rows.append(
            (
                proj.umin - rec.rect.umin,
                proj.umax - rec.rect.umax,
                proj.vmin - rec.rect.vmin,
                proj.vmax - rec.rect.vmax,
            )
        )
    return np.array(rows, dtype=float).reshape(-1, 4)


def _histogram(values: np.ndarray) -> EdgeHistogram:
    lo = math.floor(values.min() / BIN_WIDTH) * BIN_WIDTH
    hi = math.ceil(values.max() / BIN_WIDTH) * BIN_WIDTH
    nbins = max(1, int(round((hi - lo) / BIN_WIDTH)))
    edges = lo + BIN_WIDTH * np.arange(nbins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return EdgeHistogram(
        bin_edges=edges,
        counts=counts,
        mean=float(values.mean()),
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
    )


def stats_from_samples(samples: np.ndarray) -> DeviationStats:
    samples = np.asarray(samples, dtype=float).reshape(-1, 4)
    if len(samples) == 0:
        raise EmptyStatsError("no objects left after filtering")
    return DeviationStats(
        n=len(samples),
        edges={name: _histogram(samples[:, i]) for i, name in enumerate(EDGE_NAMES)},
    )


def deviation_stats(
    records: Iterable[LabelRecord],
    K: CameraIntrinsics,
    filters: DeviationFilters = DeviationFilters(),
) -> DeviationStats:
    return stats_from_samples(deviation_samples(records, K, filters))


def load_kitti_dir(label_dir, calib_dir) -> tuple:
    """Pair ``label_2`` files with calibrations by file stem.

    Returns ``(items, warnings)`` where items are ``(stem, records, K)`` in
    filename order. A label file without a calibration is skipped with a
    warning.
    """
    label_dir = Path(label_dir)
    calib_dir = Path(calib_dir)
    items = []
    warnings = []
    for path in sorted(label_dir.glob("*.txt")):
        calib_path = calib_dir / path.name
        if not calib_path.is_file():
            msg = f"{path.name}: no calibration file {calib_path}, skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        try:
            records = parse_label_file(path.read_text())
            K = parse_calib(calib_path.read_text())
        except ParseError as e:
            raise ParseError(f"{path.name}: {e}") from None
        items.append((path.stem, records, K))
    return items, warnings


# -- synthetic scenes --------------------------------------------------------------


@dataclass(frozen=True)
class SceneRanges:
    x: tuple = (-15.0, 15.0)
    y: tuple = (0.6, 1.2)
    z: tuple = (5.0, 60.0)
    l: tuple = (3.2, 4.8)
    h: tuple = (1.4, 1.8)
    w: tuple = (1.5, 1.9)
    ry: tuple = (-math.pi, math.pi)

    def validate(self):
        for name in ("x", "y", "z", "l", "h", "w", "ry"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"range {name}={lo, hi} is not a valid interval")
        for name in ("l", "h", "w"):
            if getattr(self, name)[0] <= 0:
                raise ConfigError(f"dimension range {name} must be positive")
        reach = 0.5 * math.hypot(self.l[1], self.w[1])
        if self.z[0] - reach <= 1e-6:
            raise ConfigError(
                f"z range starts at {self.z[0]} m but boxes reach {reach:.3f} m towards the camera"
            )


def synth_scene(
    rng: np.random.Generator,
    n: int,
    ranges: SceneRanges = SceneRanges(),
    K: CameraIntrinsics = KITTI_P2,
) -> tuple:
    """``n`` random boxes with their exact projected enclosing rects."""
    if n < 0:
        raise ConfigError(f"scene size must be >= 0, got {n}")
    ranges.validate()
    boxes = []
    rects = []
    for _ in range(n):
        vals = [rng.uniform(*getattr(ranges, k)) for k in ("x", "y", "z", "l", "h", "w", "ry")]
        box = Box3D(*vals)
        boxes.append(box)
        rects.append(projected_enclosing_rect(box, K))
    return boxes, K, rects


def write_synthetic_kitti(out_dir, rng: np.random.Generator, n_files: int, per_file: int) -> None:
    """Write a consistent ``label_2``/``calib`` pair directory (test fixture)."""
    out = Path(out_dir)
    (out / "label_2").mkdir(parents=True, exist_ok=True)
    (out / "calib").mkdir(parents=True, exist_ok=True)
    for i in range(n_files):
        boxes, K, rects = synth_scene(rng, per_file)
        stem = f"{i:06d}"
        (out / "label_2" / f"{stem}.txt").write_text(
            serialize_labels(box_to_label(b, r) for b, r in zip(boxes, rects))
        )
        (out / "calib" / f"{stem}.txt").write_text(calib_text(K))


def calib_text(K: CameraIntrinsics) -> str:
    p = [K.fu, 0.0, K.cu, 0.0, 0.0, K.fv, K.cv, 0.0, 0.0, 0.0, 1.0, 0.0]
    row = " ".join(repr(float(v)) for v in p)
    return f"P0: {row}\nP1: {row}\nP2: {row}\nP3: {row}\n"

