"""Dataset and trajectory files.

A dataset directory holds plain CSV streams with fixed headers::

    imu.csv       t,ax,ay,az,wx,wy,wz             (body frame, m/s^2 and rad/s)
    legs.csv      t,leg,q1,q2,q3,dq1,dq2,dq3,force (rad, rad/s, N)
    gt.csv        trajectory format (see below), optional
    contacts.csv  t,leg,phase,slipping              (simulated contact truth), optional
    manifest.yaml name, sensor_rate and file names, optional

Trajectory files hold one pose per line, ``t x y z qw qx qy qz`` separated by
spaces, with ``#`` comments.  Floats are written with enough digits to read
back bit-exact.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation

from .eskf import ImuSample
from .kinematics import LEG_ORDER, JointState, LegId
from .metrics import Trajectory

log = logging.getLogger(__name__)

IMU_HEADER = ["t", "ax", "ay", "az", "wx", "wy", "wz"]
LEGS_HEADER = ["t", "leg", "q1", "q2", "q3", "dq1", "dq2", "dq3", "force"]
CONTACTS_HEADER = ["t", "leg", "phase", "slipping"]
MERGE_TOL = 1e-3  # s
QUAT_TOL = 1e-6


class DataError(ValueError):
    """Malformed or inconsistent input data; carries file and line."""

    def __init__(self, path, line: int | None, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


@dataclass(frozen=True)
class LegMeasurement:
    t: float
    leg_id: LegId
    q: np.ndarray
    q_dot: np.ndarray
    force: float

    @property
    def joint_state(self) -> JointState:
        return JointState(self.q, self.q_dot)


@dataclass(frozen=True)
class Frame:
    """One merged sensor step: an IMU sample and one measurement per leg."""

    t: float
    imu: ImuSample
    legs: tuple[LegMeasurement, ...]  # in LEG_ORDER


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    name: str = "dataset"
    sensor_rate: float = 500.0
    imu: str = "imu.csv"
    legs: str = "legs.csv"
    gt: str | None = "gt.csv"
    contacts: str | None = "contacts.csv"
    robot: str | None = None  # reference to a robot parameter file or preset

    def path(self, key: str) -> Path | None:
        name = getattr(self, key)
        return None if name is None else self.root / name

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        """Manifest of a dataset directory; defaults apply without ``manifest.yaml``."""
        root = Path(root)
        if not root.is_dir():
            raise DataError(root, None, "dataset directory does not exist")
        fields = {}
        mpath = root / "manifest.yaml"
        if mpath.exists():
            try:
                fields = yaml.safe_load(mpath.read_text()) or {}
            except yaml.YAMLError as exc:
                raise DataError(mpath, None, f"invalid YAML: {exc}") from None
            if not isinstance(fields, dict):
                raise DataError(mpath, None, "manifest must be a mapping")
            allowed = {"name", "sensor_rate", "imu", "legs", "gt", "contacts", "robot"}
            unknown = set(fields) - allowed
            if unknown:
                raise DataError(mpath, None, f"unknown manifest keys {sorted(unknown)}")
        m = cls(root=root, **fields)
        if not m.sensor_rate > 0:
            raise DataError(mpath, None, "sensor_rate must be positive")
        for key in ("imu", "legs"):
            if not m.path(key).exists():
                raise DataError(m.path(key), None, f"{key} stream not found")
        return m


# ----------------------------------------------------------------- writing


def _f(x) -> str:
    return repr(float(x))


def write_imu(path, t, acc, gyro) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(IMU_HEADER) + "\n")
        for ti, a, w in zip(t, acc, gyro):
            fh.write(",".join(map(_f, (ti, *a, *w))) + "\n")


def write_legs(path, t, q: dict, q_dot: dict, force: dict) -> None:
    """Rows ordered by time, then by leg in ``LEG_ORDER``."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(LEGS_HEADER) + "\n")
        for i, ti in enumerate(t):
            ts = _f(ti)
            for leg in LEG_ORDER:
                vals = (*q[leg][i], *q_dot[leg][i], force[leg][i])
                fh.write(ts + "," + leg.value + "," + ",".join(map(_f, vals)) + "\n")


def write_contacts(path, t, stance: dict, slipping: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CONTACTS_HEADER) + "\n")
        for i, ti in enumerate(t):
            ts = _f(ti)
            for leg in LEG_ORDER:
                phase = "STANCE" if stance[leg][i] else "SWING"
                fh.write(f"{ts},{leg.value},{phase},{int(bool(slipping[leg][i]))}\n")


def write_dataset(sim, out_dir, name: str = "sim") -> DatasetManifest:
    """Write a ``SimOutput`` as a dataset directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_imu(out / "imu.csv", sim.t, sim.imu_a, sim.imu_w)
    write_legs(out / "legs.csv", sim.t, sim.q, sim.q_dot, sim.force)
    write_trajectory(sim.ground_truth, out / "gt.csv")
    write_contacts(out / "contacts.csv", sim.t, sim.stance, sim.slipping)
    rate = sim.config.imu_rate if sim.config is not None else 500.0
    manifest = {"name": name, "sensor_rate": float(rate), "imu": "imu.csv", "legs": "legs.csv",
                "gt": "gt.csv", "contacts": "contacts.csv"}
    (out / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))
    return DatasetManifest(root=out, **manifest)


# ----------------------------------------------------------------- reading


def _rows(path, header):
    """Yield ``(line_number, fields)`` after validating the header line."""
    path = Path(path)
    if not path.exists():
        raise DataError(path, None, "file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(path, 1, "empty file, expected a header") from None
        if [h.strip() for h in first] != header:
            raise DataError(path, 1, f"bad header {first}, expected {header}")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield reader.line_num, row


def _floats(path, line, values):
    try:
        out = [float(v) for v in values]
    except ValueError:
        raise DataError(path, line, f"non-numeric field in {values}") from None
    if not all(math.isfinite(v) for v in out):
        raise DataError(path, line, "non-finite value")
    return out


def read_imu(path):
    """Iterate ``ImuSample`` records, checking strictly increasing time."""
    prev = None
    for line, row in _rows(path, IMU_HEADER):
        if len(row) != len(IMU_HEADER):
            raise DataError(path, line, f"expected {len(IMU_HEADER)} fields, got {len(row)}")
        t, ax, ay, az, wx, wy, wz = _floats(path, line, row)
        if prev is not None and not t > prev:
            raise DataError(path, line, f"timestamp {t!r} does not increase after {prev!r}")
        prev = t
        yield ImuSample(t, np.array([ax, ay, az]), np.array([wx, wy, wz]))


def read_legs(path):
    """Iterate ``LegMeasurement`` records; each leg's timestamps must increase."""
    last: dict = {}
    prev_t = None
    for line, row in _rows(path, LEGS_HEADER):
        if len(row) != len(LEGS_HEADER):
            raise DataError(path, line, f"expected {len(LEGS_HEADER)} fields, got {len(row)}")
        try:
            leg = LegId(row[1].strip())
        except ValueError:
            raise DataError(path, line, f"unknown leg {row[1]!r}") from None
        vals = _floats(path, line, [row[0], *row[2:]])
        t = vals[0]
        if leg in last and not t > last[leg]:
            raise DataError(path, line, f"{leg.value} timestamp {t!r} does not increase after {last[leg]!r}")
        if prev_t is not None and t < prev_t - MERGE_TOL:
            raise DataError(path, line, f"timestamp {t!r} goes back from {prev_t!r}")
        last[leg] = t
        prev_t = t if prev_t is None else max(prev_t, t)
        yield LegMeasurement(t, leg, np.array(vals[1:4]), np.array(vals[4:7]), vals[7])


class FrameStream:
    """Merge the IMU and leg streams into frames on the IMU clock.

    Each IMU sample is paired, per leg, with the nearest leg record within
    ``tol`` seconds.  Frames missing a leg are dropped and counted in
    ``dropped``.
    """

    def __init__(self, imu_path, legs_path, tol: float = MERGE_TOL):
        self.imu_path = imu_path
        self.legs_path = legs_path
        self.tol = tol
        self.dropped = 0
        self.emitted = 0

    def __iter__(self):
        legs_it = read_legs(self.legs_path)
        pending: list[LegMeasurement] = []
        nxt = next(legs_it, None)
        for imu in read_imu(self.imu_path):
            while nxt is not None and nxt.t <= imu.t + self.tol:
                pending.append(nxt)
                nxt = next(legs_it, None)
            pending = [m for m in pending if m.t >= imu.t - self.tol]
            best: dict = {}
            for m in pending:
                cur = best.get(m.leg_id)
                if cur is None or abs(m.t - imu.t) < abs(cur.t - imu.t):
                    best[m.leg_id] = m
            if len(best) < len(LEG_ORDER):
                self.dropped += 1
                missing = [l.value for l in LEG_ORDER if l not in best]
                log.debug("t=%r: dropping frame, missing legs %s", imu.t, missing)
                continue
            used = {id(m) for m in best.values()}
            pending = [m for m in pending if id(m) not in used and m.t > best[m.leg_id].t]
            self.emitted += 1
            yield Frame(imu.t, imu, tuple(best[leg] for leg in LEG_ORDER))
        if self.dropped:
            log.warning("dropped %d incomplete frames", self.dropped)


def read_stream(path) -> FrameStream:
    """Merged frame iterator over a dataset directory (or its manifest)."""
    m = path if isinstance(path, DatasetManifest) else DatasetManifest.load(path)
    return FrameStream(m.path("imu"), m.path("legs"))


def read_contacts(path) -> dict:
    """Simulated contact truth: ``{leg: (t, stance, slipping)}`` arrays."""
    data = {leg: ([], [], []) for leg in LEG_ORDER}
    for line, row in _rows(path, CONTACTS_HEADER):
        if len(row) != len(CONTACTS_HEADER):
            raise DataError(path, line, "expected 4 fields")
        try:
            leg = LegId(row[1].strip())
        except ValueError:
            raise DataError(path, line, f"unknown leg {row[1]!r}") from None
        phase = row[2].strip()
        if phase not in ("STANCE", "SWING"):
            raise DataError(path, line, f"unknown phase {phase!r}")
        t, slip = _floats(path, line, [row[0], row[3]])
        data[leg][0].append(t)
        data[leg][1].append(phase == "STANCE")
        data[leg][2].append(bool(slip))
    return {leg: tuple(np.array(x) for x in v) for leg, v in data.items()}


# ----------------------------------------------------------------- trajectories


def _quat_wxyz(R: np.ndarray) -> np.ndarray:
    xyzw = Rotation.from_matrix(R).as_quat()
    q = np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)
    # canonical hemisphere: qw >= 0
    return np.where(q[..., :1] < 0.0, -q, q)


def format_pose(t: float, p, q_wxyz) -> str:
    vals = " ".join("%.17g" % (v + 0.0) for v in (*p, *q_wxyz))
    return "%.6f %s" % (t, vals)


def write_trajectory(traj: Trajectory, path, header: str | None = None) -> None:
    quats = _quat_wxyz(traj.R) if len(traj) else np.zeros((0, 4))
    with open(path, "w") as fh:
        fh.write("# t x y z qw qx qy qz\n")
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for t, p, q in zip(traj.t, traj.p, quats):
            fh.write(format_pose(t, p, q) + "\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise DataError(path, None, "file not found")
    ts, ps, qs = [], [], []
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(path, n, f"expected 8 fields, got {len(parts)}")
            vals = _floats(path, n, parts)
            q = np.array(vals[4:])
            norm = float(np.linalg.norm(q))
            if abs(norm - 1.0) > QUAT_TOL:
                raise DataError(path, n, f"quaternion norm {norm:.9f} is not 1")
            if ts and not vals[0] > ts[-1]:
                raise DataError(path, n, f"timestamp {vals[0]!r} does not increase after {ts[-1]!r}")
            ts.append(vals[0])
            ps.append(vals[1:4])
            qs.append(q / norm)
    if not ts:
        return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3, 3)))
    q = np.array(qs)
    R = Rotation.from_quat(np.concatenate([q[:, 1:], q[:, :1]], axis=1)).as_matrix()
    return Trajectory(np.array(ts), np.array(ps), R)


__all__ = [
    "DataError", "LegMeasurement", "Frame", "DatasetManifest", "FrameStream", "read_stream",
    "read_imu", "read_legs", "read_contacts", "write_imu", "write_legs", "write_contacts",
    "write_dataset", "write_trajectory", "read_trajectory", "format_pose",
]
