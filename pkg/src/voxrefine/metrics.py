"""Point-to-point distortion, PSNR, RD curves, and Bjontegaard deltas.

Nearest neighbors come from a kd-tree, but the squared distance is
recomputed from the matched pair in integer arithmetic, so results equal
the brute-force double loop bit for bit (voxel coordinates are exact in
float64, so the tree's nearest index is itself exact).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, InputError, ParseError
from .pointcloud import PointCloud

PSNR_SENTINEL = 999.0


@dataclass(frozen=True)
class D1Result:
    """Directional mean squared nearest-neighbor distances and symmetric PSNR."""

    mse_ab: float
    mse_ba: float
    psnr_db: float


@dataclass(frozen=True)
class RDCurve:
    """A labeled rate-distortion series, sorted by strictly increasing bpp."""

    points: tuple
    label: str = ""

    def __post_init__(self):
        pts = tuple(
            (float(bpp), float(psnr)) for bpp, psnr in self.points
        )
        if not pts:
            raise InputError("RD curve has no points")
        for bpp, psnr in pts:
            if not np.isfinite(bpp) or bpp <= 0.0:
                raise InputError(f"bpp must be finite and positive, got {bpp}")
            if not np.isfinite(psnr):
                raise InputError(f"psnr must be finite, got {psnr}")
        pts = tuple(sorted(pts))
        for (b0, _), (b1, _) in zip(pts, pts[1:]):
            if b0 == b1:
                raise InputError(f"duplicate bpp {b0} in RD curve")
        object.__setattr__(self, "points", pts)

    @property
    def bpps(self) -> np.ndarray:
        return np.array([b for b, _ in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p for _, p in self.points])


# ---------------------------------------------------------------------------
# D1

def _nn_sq_dists(a: PointCloud, b: PointCloud) -> np.ndarray:
    """Exact squared distance from each point of a to its nearest point of b."""
    if len(a) == 0 or len(b) == 0:
        raise InputError("D1 distances need two non-empty clouds")
    tree = cKDTree(b.points.astype(np.float64))
    _, idx = tree.query(a.points.astype(np.float64), k=1)
    diff = a.points - b.points[idx]
    return np.sum(diff * diff, axis=1)


def d1_mse(a: PointCloud, b: PointCloud) -> float:
    sq = _nn_sq_dists(a, b)
    return float(np.sum(sq, dtype=np.int64)) / len(a)


def per_point_errors(a: PointCloud, b: PointCloud) -> np.ndarray:
    """Squared nearest-neighbor distance per point of a, in a's point order."""
    return _nn_sq_dists(a, b).astype(np.float64)


def d1_psnr(a: PointCloud, b: PointCloud, depth: int,
            peak: float | None = None) -> D1Result:
    """Symmetric D1 PSNR: 10*log10(3*peak^2 / worst-direction MSE).

    The default peak is 2^depth - 1. Zero error maps to the 999.0 dB
    sentinel so results stay finite and sortable.
    """
    if peak is None:
        peak = float((1 << depth) - 1)
    if peak <= 0.0:
        raise DomainError(f"peak must be positive, got {peak}")
    mse_ab = d1_mse(a, b)
    mse_ba = d1_mse(b, a)
    worst = max(mse_ab, mse_ba)
    if worst == 0.0:
        psnr = PSNR_SENTINEL
    else:
        psnr = min(10.0 * np.log10(3.0 * peak * peak / worst), PSNR_SENTINEL)
    return D1Result(mse_ab=mse_ab, mse_ba=mse_ba, psnr_db=float(psnr))


# ---------------------------------------------------------------------------
# Bjontegaard delta

@dataclass(frozen=True)
class BDReport:
    delta_db: float
    degree_reference: int
    degree_test: int
    log_rate_low: float
    log_rate_high: float


def bd_report(reference: RDCurve, test: RDCurve) -> BDReport:
    """Average vertical gap between fitted RD curves over the shared rate range.

    PSNR is fitted as a polynomial in log10(bpp), degree min(3, n-1), with
    the log-rate axis centered on the overlap midpoint; the fitted
    difference is integrated in closed form and divided by the overlap
    width. Positive means the test curve sits above the reference.
    """
    for curve, name in ((reference, "reference"), (test, "test")):
        if len(curve.points) < 2:
            raise InputError(f"{name} curve needs at least 2 points for a fit")
    r_ref = np.log10(reference.bpps)
    r_test = np.log10(test.bpps)
    lo = max(r_ref.min(), r_test.min())
    hi = min(r_ref.max(), r_test.max())
    if not hi > lo:
        raise DomainError(
            f"rate ranges do not overlap (log10 bpp {r_ref.min():.4f}..{r_ref.max():.4f} "
            f"vs {r_test.min():.4f}..{r_test.max():.4f})"
        )
    mid = 0.5 * (lo + hi)
    deg_ref = min(3, len(reference.points) - 1)
    deg_test = min(3, len(test.points) - 1)
    fit_ref = np.polyfit(r_ref - mid, reference.psnrs, deg_ref)
    fit_test = np.polyfit(r_test - mid, test.psnrs, deg_test)
    diff_int = np.polyint(np.polysub(fit_test, fit_ref))
    area = np.polyval(diff_int, hi - mid) - np.polyval(diff_int, lo - mid)
    return BDReport(
        delta_db=float(area / (hi - lo)),
        degree_reference=deg_ref,
        degree_test=deg_test,
        log_rate_low=float(lo),
        log_rate_high=float(hi),
    )


def bd_psnr(reference: RDCurve, test: RDCurve) -> float:
    return bd_report(reference, test).delta_db


# ---------------------------------------------------------------------------
# CSV interchange

def rd_to_csv(curves) -> str:
    """One curve -> `bpp,psnr_db`; several -> labeled rows with side bits."""
    if isinstance(curves, RDCurve):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["bpp", "psnr_db"])
        for bpp, psnr in curves.points:
            w.writerow([f"{bpp:.10g}", f"{psnr:.10g}"])
        return buf.getvalue()
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["label", "bpp", "psnr_db", "side_bits"])
    for curve, side_bits in curves:
        bits = list(side_bits) if side_bits is not None else [0] * len(curve.points)
        if len(bits) != len(curve.points):
            raise InputError("side_bits length does not match curve length")
        for (bpp, psnr), sb in zip(curve.points, bits):
            w.writerow([curve.label, f"{bpp:.10g}", f"{psnr:.10g}", int(sb)])
    return buf.getvalue()


def rd_from_csv(text: str, label: str | None = None) -> RDCurve:
    """Parse either CSV layout back into a single curve.

    For the labeled layout, `label` picks the series; it is required when
    several labels are present.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("empty RD CSV")
    header = [c.strip().lower() for c in rows[0]]
    try:
        if header[:2] == ["bpp", "psnr_db"]:
            pts = [(float(r[0]), float(r[1])) for r in rows[1:]]
            return RDCurve(points=tuple(pts), label=label or "")
        if header[:3] == ["label", "bpp", "psnr_db"]:
            labels = {r[0] for r in rows[1:]}
            if label is None:
                if len(labels) > 1:
                    raise ParseError(
                        f"CSV holds several series {sorted(labels)}; pick a label"
                    )
                label = next(iter(labels)) if labels else ""
            pts = [(float(r[1]), float(r[2])) for r in rows[1:] if r[0] == label]
            if not pts:
                raise ParseError(f"no rows with label {label!r}")
            return RDCurve(points=tuple(pts), label=label)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad RD CSV row: {exc}") from None
    raise ParseError(f"unrecognized RD CSV header {rows[0]!r}")


def errors_to_csv(pc: PointCloud, sq_err: np.ndarray) -> str:
    if len(pc) != len(sq_err):
        raise InputError("per-point error length does not match cloud")
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["x", "y", "z", "sq_err"])
    for (x, y, z), e in zip(pc.points, sq_err):
        w.writerow([int(x), int(y), int(z), f"{float(e):.10g}"])
    return buf.getvalue()
