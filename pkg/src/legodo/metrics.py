"""Trajectory error metrics: ATE, AHE, RPE, endpoint errors and discrete Frechet distance.

All per-pose errors are aggregated as RMSE.  Trajectories are compared in
their own frames unless an alignment is requested (see ``align``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray  # (N,)
    p: np.ndarray  # (N, 3)
    R: np.ndarray  # (N, 3, 3)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.R = np.asarray(self.R, dtype=float).reshape(-1, 3, 3)
        n = self.t.size
        if self.p.shape[0] != n or self.R.shape[0] != n:
            raise ValueError("t, p and R must have the same length")
        if n > 1 and np.any(np.diff(self.t) <= 0.0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return self.t.size

    def path_length(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.p, axis=0), axis=1).sum())

    def transformed(self, R0: np.ndarray, p0: np.ndarray) -> "Trajectory":
        """Apply the rigid map ``x -> R0 x + p0`` to every pose."""
        return Trajectory(self.t.copy(), self.p @ R0.T + p0, np.einsum("ij,njk->nik", R0, self.R))


@dataclass
class MetricReport:
    ate_m: float = float("nan")
    ahe_deg: float = float("nan")
    rpe_trans_pct: float = float("nan")
    rpe_rot_deg_per_m: float = float("nan")
    fpe_m: float = float("nan")
    drift_pct: float = float("nan")
    length_err_pct: float = float("nan")
    frechet_m: float = float("nan")
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.05) -> np.ndarray:
    """Nearest-timestamp pairing; returns an ``(K, 2)`` array of ``(i_est, j_gt)``."""
    if len(est) == 0 or len(gt) == 0:
        raise MetricError("cannot associate an empty trajectory")
    idx = np.searchsorted(est.t, gt.t)
    lo = np.clip(idx - 1, 0, len(est) - 1)
    hi = np.clip(idx, 0, len(est) - 1)
    pick = np.where(np.abs(est.t[lo] - gt.t) <= np.abs(est.t[hi] - gt.t), lo, hi)
    keep = np.abs(est.t[pick] - gt.t) <= max_dt
    pairs = np.stack([pick[keep], np.nonzero(keep)[0]], axis=1)
    if pairs.shape[0] == 0:
        raise MetricError(
            f"no pose pairs within {max_dt} s: est spans [{est.t[0]}, {est.t[-1]}], "
            f"gt spans [{gt.t[0]}, {gt.t[-1]}]"
        )
    return pairs


def yaw_of(R: np.ndarray) -> np.ndarray:
    """Heading of the body x axis projected on the world horizontal plane."""
    return np.arctan2(R[..., 1, 0], R[..., 0, 0])


def wrap_deg(a: np.ndarray) -> np.ndarray:
    """Wrap angles in degrees to (-180, 180]."""
    w = np.mod(a + 180.0, 360.0) - 180.0
    return np.where(w == -180.0, 180.0, w)


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle [rad] of rotation matrices, stable near 0 and pi."""
    tr = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    skew_part = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    return np.arctan2(0.5 * np.linalg.norm(skew_part, axis=-1), tr)


def _rmse(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def ate_rmse(est: Trajectory, gt: Trajectory, pairs: np.ndarray) -> float:
    d = est.p[pairs[:, 0]] - gt.p[pairs[:, 1]]
    return _rmse(np.linalg.norm(d, axis=1))


def ahe_rmse(est: Trajectory, gt: Trajectory, pairs: np.ndarray) -> float:
    dy = np.degrees(yaw_of(est.R[pairs[:, 0]]) - yaw_of(gt.R[pairs[:, 1]]))
    return _rmse(wrap_deg(dy))


def rpe(est: Trajectory, gt: Trajectory, pairs: np.ndarray, delta_m: float = 10.0):
    """Relative pose error over segments of ``delta_m`` ground-truth arc length.

    Returns ``(trans_pct, rot_deg_per_m, n_segments)``; raises ``MetricError``
    if the ground truth is shorter than one segment.
    """
    gi = pairs[:, 1]
    ei = pairs[:, 0]
    gp = gt.p[gi]
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(gp, axis=0), axis=1))])
    if arc[-1] < delta_m:
        raise MetricError(f"trajectory length {arc[-1]:.3f} m shorter than RPE segment {delta_m} m")
    start = np.arange(arc.size)
    end = np.searchsorted(arc, arc + delta_m, side="left")
    ok = end < arc.size
    a, b = start[ok], end[ok]

    Rg_a, Rg_b = gt.R[gi[a]], gt.R[gi[b]]
    Re_a, Re_b = est.R[ei[a]], est.R[ei[b]]
    # relative motions expressed in the segment's start frame
    dg_t = np.einsum("nji,nj->ni", Rg_a, gt.p[gi[b]] - gt.p[gi[a]])
    de_t = np.einsum("nji,nj->ni", Re_a, est.p[ei[b]] - est.p[ei[a]])
    dg_R = np.einsum("nji,njk->nik", Rg_a, Rg_b)
    de_R = np.einsum("nji,njk->nik", Re_a, Re_b)
    # error transform E = dG^-1 dE
    e_t = np.einsum("nji,nj->ni", dg_R, de_t - dg_t)
    e_R = np.einsum("nji,njk->nik", dg_R, de_R)
    trans = np.linalg.norm(e_t, axis=1)
    rot = np.degrees(rotation_angle(e_R))
    return _rmse(trans) / delta_m * 100.0, _rmse(rot) / delta_m, int(a.size)


def endpoint_metrics(est: Trajectory, gt: Trajectory):
    """``(fpe_m, drift_pct, length_err_pct)`` from trajectory endpoints and path lengths."""
    if len(est) < 2 or len(gt) < 2:
        raise MetricError("endpoint metrics need at least two poses per trajectory")
    L_gt = gt.path_length()
    if L_gt < 0.1:
        raise MetricError(f"ground-truth path length {L_gt:.4f} m is below 0.1 m")
    fpe = float(np.linalg.norm(est.p[-1] - gt.p[-1]))
    L_est = est.path_length()
    return fpe, fpe / L_gt * 100.0, abs(L_est - L_gt) / L_gt * 100.0


def _subsample(pts: np.ndarray, max_points: int) -> np.ndarray:
    n = pts.shape[0]
    if n <= max_points:
        return pts
    idx = np.round(np.linspace(0.0, n - 1, max_points)).astype(int)
    return pts[idx]


def discrete_frechet(a_pts, b_pts, max_points: int = 5000) -> float:
    """Discrete Frechet distance via the coupling-lattice recursion.

    Evaluated one anti-diagonal at a time so each sweep is a vector op.
    """
    A = np.asarray(a_pts, dtype=float)
    B = np.asarray(b_pts, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise MetricError("Frechet distance of an empty curve")
    A = _subsample(A, max_points)
    B = _subsample(B, max_points)
    n, m = A.shape[0], B.shape[0]

    # Slot r + 1 holds lattice row r; slot 0 is an inf sentinel for row -1.
    prev2 = np.full(n + 1, np.inf)
    prev = np.full(n + 1, np.inf)
    for k in range(n + m - 1):
        i = np.arange(max(0, k - m + 1), min(n - 1, k) + 1)
        d = np.linalg.norm(A[i] - B[k - i], axis=1)
        cur = np.full(n + 1, np.inf)
        if k == 0:
            cur[1] = d[0]
        else:
            # predecessors (i-1, j), (i, j-1) on diagonal k-1 and (i-1, j-1) on k-2
            best = np.minimum(np.minimum(prev[i], prev[i + 1]), prev2[i])
            cur[i + 1] = np.maximum(best, d)
        prev2, prev = prev, cur
    return float(prev[n])


def align_initial(est: Trajectory, gt: Trajectory, pairs: np.ndarray) -> Trajectory:
    """Re-express ``est`` so its first associated pose coincides with gt's."""
    i, j = pairs[0]
    R0 = gt.R[j] @ est.R[i].T
    p0 = gt.p[j] - R0 @ est.p[i]
    return est.transformed(R0, p0)


def align_se3(est: Trajectory, gt: Trajectory, pairs: np.ndarray) -> Trajectory:
    """Least-squares rigid alignment of associated positions (no scale)."""
    X = est.p[pairs[:, 0]]
    Y = gt.p[pairs[:, 1]]
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    U, _, Vt = np.linalg.svd((Y - my).T @ (X - mx))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R0 = U @ D @ Vt
    return est.transformed(R0, my - R0 @ mx)


def evaluate(est: Trajectory, gt: Trajectory, *, max_dt: float = 0.05, delta_m: float = 10.0,
             align: str = "none", frechet_max_points: int = 5000) -> MetricReport:
    """Compute the full report; metrics that cannot be evaluated are left NaN."""
    pairs = associate(est, gt, max_dt)
    if align == "initial":
        est = align_initial(est, gt, pairs)
    elif align == "se3":
        est = align_se3(est, gt, pairs)
    elif align != "none":
        raise ValueError(f"unknown alignment {align!r}")

    rep = MetricReport()
    rep.meta = {"pairs": int(pairs.shape[0]), "align": align, "rpe_delta_m": delta_m}
    rep.ate_m = ate_rmse(est, gt, pairs)
    rep.ahe_deg = ahe_rmse(est, gt, pairs)
    try:
        rep.rpe_trans_pct, rep.rpe_rot_deg_per_m, nseg = rpe(est, gt, pairs, delta_m)
        rep.meta["rpe_segments"] = nseg
    except MetricError as exc:
        log.warning("RPE omitted: %s", exc)
        rep.meta["rpe_segments"] = 0
        rep.meta["rpe_error"] = str(exc)
    try:
        rep.fpe_m, rep.drift_pct, rep.length_err_pct = endpoint_metrics(est, gt)
    except MetricError as exc:
        log.warning("endpoint metrics omitted: %s", exc)
        rep.meta["endpoint_error"] = str(exc)
    rep.frechet_m = discrete_frechet(est.p, gt.p, frechet_max_points)
    rep.meta["frechet_points"] = [min(len(est), frechet_max_points), min(len(gt), frechet_max_points)]
    return rep
