"""Stitch parallel scan lines into a 2D anomaly image and find objects.

Per-line baselines are removed by the line median (robust to one object
crossing), lines are placed at their true cross-track offsets, and the
image is linearly interpolated across lines onto the requested pitch.
Detection thresholds at a multiple of the image's median absolute
deviation, groups super-threshold cells by 8-connectivity, and reads
each group's position and orientation from its anomaly-weighted moments.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .scan import ScanSession
from .sensor import tick_distance


@dataclass
class SubsurfaceImage:
    """Baseline-removed capacitance anomalies on a regular grid.

    values[row, col]: row walks cross-track (y, line offsets), col walks
    along-track (x).  origin_mm locates values[0, 0] in the scan-path
    frame (along-track, cross-track from the first line's origin).
    """

    values: np.ndarray
    x_pitch_mm: float
    y_pitch_mm: float
    origin_mm: tuple[float, float] = (0.0, 0.0)
    provenance: str = ""
    # robust noise scale of the un-resampled line anomalies (pF); 0 means
    # unknown, in which case thresholds fall back to the image values
    noise_scale_pf: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("image values must be 2D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")


@dataclass(frozen=True)
class Detection:
    """One localized subsurface object."""

    centroid_mm: tuple[float, float]
    yaw_deg: float
    bbox_mm: tuple[float, float, float, float]  # x0, y0, x1, y1
    peak_anomaly_pf: float
    area_mm2: float
    klass: str = "unknown"

    def to_doc(self) -> dict:
        return {
            "centroid_mm": list(self.centroid_mm),
            "yaw_deg": self.yaw_deg,
            "bbox_mm": list(self.bbox_mm),
            "peak_anomaly_pf": self.peak_anomaly_pf,
            "area_mm2": self.area_mm2,
            "klass": self.klass,
        }


def anomaly_noise_scale(anomalies: np.ndarray, quantum_pf: float = 0.0) -> float:
    """Robust spread of un-resampled line anomalies.

    MAD when it is nonzero.  Noise-free data quantizes to a perfectly
    flat baseline (MAD exactly 0); the measurement's intrinsic scale is
    then the converter's quantization step, falling back to the smallest
    nonzero deviation when the step is unknown.
    """
    dev = np.abs(anomalies - np.median(anomalies))
    mad = float(np.median(dev))
    if mad > 0.0:
        return mad
    if quantum_pf > 0.0:
        return quantum_pf
    positive = dev[dev > 0]
    return float(positive.min()) if positive.size else 0.0


def assemble(session: ScanSession, y_pitch_mm: Optional[float] = None) -> SubsurfaceImage:
    """Stitch a session's lines into the anomaly image.

    y_pitch defaults to the along-track pitch (near-square cells).  A
    single-line session comes back as one row, uninterpolated.
    """
    if not session.lines or any(len(l) == 0 for l in session.lines):
        raise ValueError("session has empty scan lines")
    lengths = {len(l) for l in session.lines}
    if len(lengths) != 1:
        raise ValueError(f"scan lines have mismatched lengths {sorted(lengths)}")

    x_pitch = tick_distance(session.encoder)
    if y_pitch_mm is None:
        y_pitch_mm = x_pitch

    raw = np.array(
        [[s.calibrated_pf for s in line] for line in session.lines], dtype=float
    )
    anomalies = raw - np.median(raw, axis=1, keepdims=True)
    noise_scale = anomaly_noise_scale(anomalies, quantum_pf=session.resolution_pf)

    from .session_io import session_digest  # late import avoids a cycle

    provenance = session_digest(session)

    n_lines = anomalies.shape[0]
    if n_lines == 1:
        return SubsurfaceImage(
            values=anomalies,
            x_pitch_mm=x_pitch,
            y_pitch_mm=y_pitch_mm,
            origin_mm=(0.0, 0.0),
            provenance=provenance,
            noise_scale_pf=noise_scale,
        )

    offsets = np.arange(n_lines) * session.path.line_spacing_mm
    span = offsets[-1]
    n_rows = int(math.floor(span / y_pitch_mm + 1e-9)) + 1
    ys = np.arange(n_rows) * y_pitch_mm
    rows = np.empty((n_rows, anomalies.shape[1]))
    for col in range(anomalies.shape[1]):
        rows[:, col] = np.interp(ys, offsets, anomalies[:, col])
    return SubsurfaceImage(
        values=rows,
        x_pitch_mm=x_pitch,
        y_pitch_mm=y_pitch_mm,
        origin_mm=(0.0, 0.0),
        provenance=provenance,
        noise_scale_pf=noise_scale,
    )


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


def mad_threshold(image: SubsurfaceImage, k_mad: float = 4.0) -> float:
    """k_mad times the image's robust deviation scale.

    Uses the measurement-level noise scale recorded at assembly (the MAD
    of the un-resampled line anomalies, or the quantization step when
    noise-free data collapses the MAD); for images built without that
    provenance the scale comes from the image values directly, with a
    mean-absolute-deviation fallback.
    """
    if image.noise_scale_pf > 0:
        return k_mad * image.noise_scale_pf
    v = image.values
    med = float(np.median(v))
    dev = np.abs(v - med)
    mad = float(np.median(dev))
    if mad == 0.0:
        mad = float(np.mean(dev))
    return k_mad * mad


def _principal_yaw_deg(w, dx, dy):
    """Angle of the weighted principal axis from +x, in [0, 180)."""
    mxx = float(np.sum(w * dx * dx))
    myy = float(np.sum(w * dy * dy))
    mxy = float(np.sum(w * dx * dy))
    angle = 0.5 * math.atan2(2.0 * mxy, mxx - myy)
    return math.degrees(angle) % 180.0


def detect(image: SubsurfaceImage, k_mad: float = 4.0) -> list[Detection]:
    """Threshold, group by 8-connectivity, and characterize each group.

    Groups smaller than two cells are discarded; detections are returned
    strongest peak first.
    """
    v = image.values
    thr = mad_threshold(image, k_mad)
    mask = v > thr
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    x0, y0 = image.origin_mm
    detections = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        if rows.size < 2:
            continue
        w = v[rows, cols]
        xs = x0 + cols * image.x_pitch_mm
        ys = y0 + rows * image.y_pitch_mm
        wsum = float(np.sum(w))
        cx = float(np.sum(w * xs)) / wsum
        cy = float(np.sum(w * ys)) / wsum
        yaw = _principal_yaw_deg(w, xs - cx, ys - cy)
        half_x, half_y = image.x_pitch_mm / 2, image.y_pitch_mm / 2
        bbox = (
            float(xs.min() - half_x),
            float(ys.min() - half_y),
            float(xs.max() + half_x),
            float(ys.max() + half_y),
        )
        detections.append(
            Detection(
                centroid_mm=(cx, cy),
                yaw_deg=yaw,
                bbox_mm=bbox,
                peak_anomaly_pf=float(w.max()),
                area_mm2=rows.size * image.x_pitch_mm * image.y_pitch_mm,
                klass="unknown",
            )
        )
    detections.sort(key=lambda d: (-d.peak_anomaly_pf, d.centroid_mm))
    return detections


def classify(
    detections: list[Detection],
    image: SubsurfaceImage,
    metal_ratio: float = 3.0,
    k_mad: float = 4.0,
) -> list[Detection]:
    """Label detections metal/wood/unknown by peak height over threshold."""
    thr = mad_threshold(image, k_mad)
    out = []
    for det in detections:
        if thr > 0 and det.peak_anomaly_pf >= metal_ratio * thr:
            klass = "metal"
        elif thr > 0 and det.peak_anomaly_pf > thr:
            klass = "wood"
        else:
            klass = "unknown"
        out.append(dataclasses.replace(det, klass=klass))
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def image_to_csv(image: SubsurfaceImage, path, extra_header: Optional[dict] = None):
    """Row-major CSV matrix with geometry in '#' header comments."""
    import json

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        header = {
            "origin_mm": list(image.origin_mm),
            "x_pitch_mm": image.x_pitch_mm,
            "y_pitch_mm": image.y_pitch_mm,
            "rows": image.values.shape[0],
            "cols": image.values.shape[1],
            "provenance": image.provenance,
            "noise_scale_pf": image.noise_scale_pf,
        }
        if extra_header:
            header.update(extra_header)
        f.write("# capascan-image 1\n")
        f.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for row in image.values:
            f.write(",".join(repr(float(x)) for x in row) + "\n")


def image_from_csv(path) -> SubsurfaceImage:
    import json

    header = {}
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ")
                if body.startswith("{"):
                    header = json.loads(body)
                continue
            rows.append([float(t) for t in line.split(",")])
    return SubsurfaceImage(
        values=np.array(rows),
        x_pitch_mm=float(header.get("x_pitch_mm", 1.0)),
        y_pitch_mm=float(header.get("y_pitch_mm", 1.0)),
        origin_mm=tuple(header.get("origin_mm", (0.0, 0.0))),
        provenance=header.get("provenance", ""),
        noise_scale_pf=float(header.get("noise_scale_pf", 0.0)),
    )


def image_to_png(image: SubsurfaceImage, path, scale: int = 4,
                 extra_metadata: Optional[dict] = None):
    """Heatmap PNG via the frozen colormap; mapping stored in metadata."""
    from .render import render_heatmap_png, value_range

    vmin, vmax = value_range(image.values)
    meta = {
        "origin_mm": list(image.origin_mm),
        "x_pitch_mm": image.x_pitch_mm,
        "y_pitch_mm": image.y_pitch_mm,
        "provenance": image.provenance,
        "noise_scale_pf": image.noise_scale_pf,
    }
    if extra_metadata:
        meta.update(extra_metadata)
    return render_heatmap_png(image.values, path, scale=scale, vmin=vmin, vmax=vmax,
                              metadata=meta)
