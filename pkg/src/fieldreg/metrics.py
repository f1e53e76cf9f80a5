"""Evaluation metrics for recovered camera parameters and their aggregation.

IoU compares the field template with the estimated template warped into the
ground-truth field frame (G = H_gt^-1 H_est), so both polygons live on the
world plane. The visible-area variant first clips both polygons to the part
of the field the ground-truth camera actually sees; it is kept for
comparison with published numbers and rewards wrong estimates whenever the
disagreement lies outside the view.

AUC is the area under the cumulative error curve up to a threshold,
normalized to [0, 1]. For IoU the error is 1 - IoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely

from .errors import DegenerateConfigurationError, InputError
from .field_model import FieldTemplate
from .geometry.types import Homography, Intrinsics, Pose

IOU_FULL = "iou_full"
IOU_VISIBLE = "iou_visible"
REPROJECTION = "reprojection"
ANGULAR = "angular_deg"
TRANSLATION = "translation_m"
FOCAL = "focal_rel"

METRICS = (IOU_FULL, IOU_VISIBLE, REPROJECTION, ANGULAR, TRANSLATION, FOCAL)
IOU_METRICS = (IOU_FULL, IOU_VISIBLE)

# AUC truncation thresholds; IoU thresholds apply to 1 - IoU
THRESHOLDS: Mapping[str, float] = {
    IOU_FULL: 1.0,
    IOU_VISIBLE: 1.0,
    REPROJECTION: 0.1,
    ANGULAR: 10.0,
    TRANSLATION: 2.5,
    FOCAL: 0.1,
}

# homogeneous scale below which a mapped point counts as sitting on the horizon
HORIZON_EPS = 1e-12


@dataclass(frozen=True)
class IoUResult:
    value: float
    horizon: bool = False  # the warped template crossed the horizon, value forced to 0

    def __float__(self):
        return self.value


def _matrix(H) -> np.ndarray:
    M = H.matrix if isinstance(H, Homography) else np.asarray(H, dtype=float)
    if M.shape != (3, 3) or not np.all(np.isfinite(M)):
        raise InputError("homography must be a finite 3x3 matrix")
    if abs(np.linalg.det(M)) <= 1e-15 * np.linalg.norm(M) ** 3:
        raise DegenerateConfigurationError("homography is not invertible")
    return M


def _warp(M: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = np.hstack([pts, np.ones((len(pts), 1))]) @ M.T
    return q[:, :2] / q[:, 2:3], q[:, 2]


def _same_side(w: np.ndarray) -> bool:
    scale = np.max(np.abs(w))
    return bool(scale > 0 and (np.all(w > HORIZON_EPS * scale) or np.all(w < -HORIZON_EPS * scale)))


def _polygon(pts: np.ndarray) -> shapely.Polygon:
    poly = shapely.Polygon(pts)
    if not poly.is_valid:
        poly = shapely.make_valid(poly)
    return poly


def _iou(a, b) -> float:
    union = a.union(b).area
    if union <= 0:
        return 0.0
    return float(np.clip(a.intersection(b).area / union, 0.0, 1.0))


def warped_template(H_gt, H_est, template: FieldTemplate):
    """Estimated template in the ground-truth field frame, or None when it wraps through infinity.

    The boundary is warped vertex by vertex; since the homogeneous scale is
    affine in the field coordinates, equal signs at the vertices mean no
    point of the polygon reaches the horizon.
    """
    G = np.linalg.solve(_matrix(H_gt), _matrix(H_est))
    warped, w = _warp(G, template.boundary_array)
    if not _same_side(w):
        return None
    return _polygon(warped)


def iou_full(H_gt, H_est, template: FieldTemplate, image_size=None) -> IoUResult:
    """Overlap of the whole template with its warped estimate.

    ``image_size`` is accepted for a uniform signature with ``iou_visible``
    and ignored.
    """
    est = warped_template(H_gt, H_est, template)
    if est is None:
        return IoUResult(0.0, horizon=True)
    return IoUResult(_iou(template.boundary_polygon(), est))


def front_sign(H_gt, template: FieldTemplate) -> float:
    """Sign of the homogeneous scale of field points in front of the ground-truth camera.

    Decided by majority over the keypoints and the field center, which a
    camera registered to the field should mostly see from the front.
    """
    M = _matrix(H_gt)
    pts = np.vstack([template.world_points(), np.asarray(template.center, dtype=float)[None]])
    w = np.hstack([pts, np.ones((len(pts), 1))]) @ M[2]
    n_pos, n_neg = int(np.sum(w > 0)), int(np.sum(w < 0))
    if n_pos == n_neg:
        raise DegenerateConfigurationError("cannot tell which side of the camera the field is on")
    return 1.0 if n_pos > n_neg else -1.0


def visible_region(H_gt, template: FieldTemplate, image_size) -> shapely.Polygon:
    """Field-plane region seen by the ground-truth camera.

    The image rectangle is clipped to the pixels whose back-projected rays
    hit the plane in front of the camera, then mapped to the field.
    """
    width, height = image_size
    M = _matrix(H_gt)
    Minv = np.linalg.inv(M)
    sign = front_sign(M, template)
    rect = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    # horizon row in pixel coordinates: sign * (a u + b v + c) > margin
    a, b, c = sign * Minv[2]
    margin = 1e-9 * np.max(np.abs(rect @ np.array([a, b]) + c))
    clipped = _clip_halfplane(rect, a, b, c - margin)
    if len(clipped) < 3:
        return shapely.Polygon()
    world, w = _warp(Minv, clipped)
    return _polygon(world)


def _clip_halfplane(poly: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to a u + b v + c >= 0."""
    out = []
    n = len(poly)
    vals = poly @ np.array([a, b]) + c
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        vp, vq = vals[i], vals[(i + 1) % n]
        if vp >= 0:
            out.append(p)
        if (vp >= 0) != (vq >= 0):
            s = vp / (vp - vq)
            out.append(p + s * (q - p))
    return np.array(out).reshape(-1, 2)


def iou_visible(H_gt, H_est, template: FieldTemplate, image_size) -> IoUResult:
    """IoU restricted to the part of the field visible in the ground-truth image."""
    est = warped_template(H_gt, H_est, template)
    if est is None:
        return IoUResult(0.0, horizon=True)
    view = visible_region(H_gt, template, image_size)
    gt_vis = template.boundary_polygon().intersection(view)
    est_vis = est.intersection(view)
    return IoUResult(_iou(gt_vis, est_vis))


def field_grid(template: FieldTemplate, step: float = 1.0) -> np.ndarray:
    """Grid points inside (or on) the field boundary, anchored at the lower-left extent."""
    if step <= 0:
        raise InputError("grid step must be positive")
    xmin, ymin, xmax, ymax = template.extent()
    xs = xmin + step * np.arange(int(np.floor((xmax - xmin) / step + 1e-9)) + 1)
    ys = ymin + step * np.arange(int(np.floor((ymax - ymin) / step + 1e-9)) + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = shapely.intersects_xy(template.boundary_polygon(), pts[:, 0], pts[:, 1])
    return pts[inside]


def _project(K: Intrinsics, pose: Pose, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pc = pts @ pose.R[:, :2].T + pose.t
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = K.f * pc[:, :2] / pc[:, 2:3] + np.array(K.principal_point)
    return uv, pc[:, 2]


def reprojection_error_normalized(
    K_gt: Intrinsics,
    M_gt: Pose,
    K_est: Intrinsics,
    M_est: Pose,
    template: FieldTemplate,
    image_size=None,
    grid_step_m: float = 1.0,
) -> float:
    """Mean pixel distance between true and estimated projections of the field grid, over image height.

    Only grid points visible under the ground truth (in front of the camera
    and inside the image) count. Returns NaN when none are visible.
    """
    width, height = image_size if image_size is not None else (K_gt.width, K_gt.height)
    pts = field_grid(template, grid_step_m)
    uv_gt, z = _project(K_gt, M_gt, pts)
    vis = (z > 0) & (uv_gt[:, 0] >= 0) & (uv_gt[:, 0] <= width) & (uv_gt[:, 1] >= 0) & (uv_gt[:, 1] <= height)
    if not np.any(vis):
        return float("nan")
    uv_est, _ = _project(K_est, M_est, pts[vis])
    return float(np.mean(np.linalg.norm(uv_est - uv_gt[vis], axis=1)) / height)


def angular_error(R_gt, R_est) -> float:
    """Rotation angle of R_gt^T R_est in degrees, in [0, 180].

    Evaluated as atan2(sin, cos) rather than arccos of the trace, which
    keeps full precision for small angles; both give the same angle.
    """
    D = np.asarray(R_gt, dtype=float).T @ np.asarray(R_est, dtype=float)
    cos = np.clip((np.trace(D) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    sin = np.linalg.norm(axis) / 2.0
    return float(np.degrees(np.arctan2(sin, cos)))


def translation_error(t_gt, t_est) -> float:
    return float(np.linalg.norm(np.asarray(t_gt, dtype=float) - np.asarray(t_est, dtype=float)))


def focal_error_rel(f_gt: float, f_est: float) -> float:
    if not f_gt > 0:
        raise InputError(f"ground-truth focal length must be positive, got {f_gt}")
    return abs(f_gt - f_est) / f_gt


def auc(errors, threshold: float) -> float:
    """Normalized area under the cumulative error curve on [0, threshold].

    Equals mean(max(0, threshold - e)) / threshold. NaN entries (undefined
    frames) are dropped; infinite errors count as failures.
    """
    if not threshold > 0:
        raise InputError("AUC threshold must be positive")
    e = np.asarray(errors, dtype=float).ravel()
    e = e[~np.isnan(e)]
    if len(e) == 0:
        raise InputError("AUC of an empty error list")
    return float(np.mean(np.maximum(threshold - e, 0.0)) / threshold)


def metric_errors(name: str, values) -> np.ndarray:
    """Values as errors (1 - IoU for the IoU metrics)."""
    v = np.asarray(values, dtype=float)
    return 1.0 - v if name in IOU_METRICS else v


def cumulative_curve(errors) -> tuple[np.ndarray, np.ndarray]:
    """Sorted finite errors and the fraction of frames at or below each."""
    e = np.asarray(errors, dtype=float)
    n = int(np.sum(~np.isnan(e)))
    e = np.sort(e[np.isfinite(e)])
    return e, np.arange(1, len(e) + 1) / max(n, 1)


@dataclass(frozen=True)
class FrameMetrics:
    frame: int
    values: Mapping[str, float]
    flags: tuple[str, ...] = ()


def evaluate_frame(
    frame: int,
    K_gt: Intrinsics,
    M_gt: Pose,
    K_est: Intrinsics | None,
    M_est: Pose | None,
    template: FieldTemplate,
    image_size,
    grid_step_m: float = 1.0,
) -> FrameMetrics:
    """All metrics for one frame; a missing estimate scores IoU 0 and infinite errors."""
    if K_est is None or M_est is None:
        inf = float("inf")
        vals = {IOU_FULL: 0.0, IOU_VISIBLE: 0.0, REPROJECTION: inf, ANGULAR: inf, TRANSLATION: inf, FOCAL: inf}
        return FrameMetrics(frame, vals, ("unregistered",))
    flags = []
    H_gt = K_gt.K @ np.column_stack([M_gt.R[:, 0], M_gt.R[:, 1], M_gt.t])
    H_est = K_est.K @ np.column_stack([M_est.R[:, 0], M_est.R[:, 1], M_est.t])
    full = iou_full(H_gt, H_est, template)
    vis = iou_visible(H_gt, H_est, template, image_size)
    if full.horizon:
        flags.append("horizon")
    reproj = reprojection_error_normalized(K_gt, M_gt, K_est, M_est, template, image_size, grid_step_m)
    if np.isnan(reproj):
        flags.append("no_visible_grid")
    vals = {
        IOU_FULL: full.value,
        IOU_VISIBLE: vis.value,
        REPROJECTION: reproj,
        ANGULAR: angular_error(M_gt.R, M_est.R),
        TRANSLATION: translation_error(M_gt.t, M_est.t),
        FOCAL: focal_error_rel(K_gt.f, K_est.f),
    }
    return FrameMetrics(frame, vals, tuple(flags))


@dataclass(frozen=True)
class Aggregate:
    mean: float
    median: float
    auc: float
    threshold: float
    n: int


REPORT_HEADER = "# fieldreg metric report v1"


@dataclass
class MetricReport:
    frames: list[FrameMetrics] = field(default_factory=list)
    label: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([fm.values[name] for fm in self.frames], dtype=float)

    def aggregate(self, name: str) -> Aggregate:
        v = self.column(name)
        v = v[~np.isnan(v)]
        thr = THRESHOLDS[name]
        if len(v) == 0:
            nan = float("nan")
            return Aggregate(nan, nan, nan, thr, 0)
        with np.errstate(invalid="ignore"):
            mean = float(np.mean(v))
        return Aggregate(mean, float(np.median(v)), auc(metric_errors(name, v), thr), thr, len(v))

    def curve(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return cumulative_curve(metric_errors(name, self.column(name)))

    def to_text(self) -> str:
        lines = [REPORT_HEADER]
        if self.label:
            lines.append(f"# label\t{self.label}")
        lines.append("\t".join(("frame",) + METRICS + ("flags",)))
        for fm in self.frames:
            cells = [str(fm.frame)] + [_fmt(fm.values[m]) for m in METRICS] + [",".join(fm.flags) or "-"]
            lines.append("\t".join(cells))
        lines.append("# aggregate\tmetric\tmean\tmedian\tauc\tthreshold\tn")
        for m in METRICS:
            a = self.aggregate(m)
            lines.append("\t".join(["# aggregate", m, _fmt(a.mean), _fmt(a.median), _fmt(a.auc), _fmt(a.threshold), str(a.n)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> MetricReport:
        lines = text.splitlines()
        if not lines or lines[0].strip() != REPORT_HEADER:
            raise InputError("not a metric report (missing header)")
        label = ""
        frames = []
        columns = None
        for ln in lines[1:]:
            if ln.startswith("# label\t"):
                label = ln.split("\t", 1)[1]
                continue
            if ln.startswith("#") or not ln.strip():
                continue
            cells = ln.split("\t")
            if columns is None:
                columns = cells
                missing = set(METRICS) - set(columns)
                if columns[0] != "frame" or missing:
                    raise InputError(f"metric report lacks columns {sorted(missing)}")
                continue
            if len(cells) != len(columns):
                raise InputError(f"malformed metric report row: {ln!r}")
            row = dict(zip(columns, cells))
            flags = () if row.get("flags", "-") == "-" else tuple(row["flags"].split(","))
            frames.append(FrameMetrics(int(row["frame"]), {m: float(row[m]) for m in METRICS}, flags))
        if columns is None:
            raise InputError("metric report has no column header")
        return cls(frames, label)


def _fmt(x: float) -> str:
    return repr(float(x))


def summary_table(reports: Sequence[MetricReport], names: Iterable[str] = METRICS) -> str:
    """Plain-text table of mean / median / AUC per report and metric."""
    names = list(names)
    rows = [["report", "metric", "mean", "median", "auc", "threshold", "n"]]
    for i, r in enumerate(reports):
        label = r.label or f"report{i}"
        for m in names:
            a = r.aggregate(m)
            rows.append([label, m, f"{a.mean:.6g}", f"{a.median:.6g}", f"{a.auc:.6g}", f"{a.threshold:g}", str(a.n)])
    widths = [max(len(row[j]) for row in rows) for j in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"
