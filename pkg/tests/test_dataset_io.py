import numpy as np
import pytest

from legodo.dataset_io import (
    DataError,
    DatasetManifest,
    FrameStream,
    read_contacts,
    read_imu,
    read_stream,
    read_trajectory,
    write_dataset,
    write_trajectory,
)
from legodo.gait_sim import GaitConfig, SensorNoise, simulate
from legodo.kinematics import LEG_ORDER
from legodo.metrics import Trajectory
from helpers import random_rotation


@pytest.fixture(scope="module")
def small_sim():
    noise = SensorNoise(sigma_a=0.02, sigma_g=0.002, force_sigma=2.0, joint_sigma=1e-3)
    return simulate(GaitConfig(duration=1.0, noise=noise, rng_seed=3))


@pytest.fixture
def dataset(tmp_path, small_sim):
    write_dataset(small_sim, tmp_path / "ds")
    return tmp_path / "ds"


def test_dataset_round_trip_is_bit_exact(dataset, small_sim):
    frames = list(read_stream(dataset))
    assert len(frames) == small_sim.t.size
    t = np.array([f.t for f in frames])
    acc = np.array([f.imu.a_raw for f in frames])
    assert np.array_equal(t, small_sim.t)
    assert np.array_equal(acc, small_sim.imu_a)
    for j, leg in enumerate(LEG_ORDER):
        q = np.array([f.legs[j].q for f in frames])
        qd = np.array([f.legs[j].q_dot for f in frames])
        force = np.array([f.legs[j].force for f in frames])
        assert all(f.legs[j].leg_id is leg for f in frames)
        assert np.array_equal(q, small_sim.q[leg])
        assert np.array_equal(qd, small_sim.q_dot[leg])
        assert np.array_equal(force, small_sim.force[leg])


def test_manifest_and_contacts(dataset, small_sim):
    m = DatasetManifest.load(dataset)
    assert m.sensor_rate == 500.0 and m.path("gt").exists()
    contacts = read_contacts(m.path("contacts"))
    for leg in LEG_ORDER:
        t, stance, slip = contacts[leg]
        assert np.array_equal(t, small_sim.t)
        assert np.array_equal(stance, small_sim.stance[leg])
        assert not slip.any()


def test_ground_truth_file_matches_simulation(dataset, small_sim):
    gt = read_trajectory(dataset / "gt.csv")
    ref = small_sim.ground_truth
    assert np.allclose(gt.t, ref.t, atol=1e-6)
    assert np.array_equal(gt.p, ref.p)
    assert np.max(np.abs(gt.R - ref.R)) < 1e-12


def _drop_leg_rows(path, times_to_drop, leg="FR"):
    lines = path.read_text().splitlines(keepends=True)
    kept = [lines[0]]
    for ln in lines[1:]:
        f = ln.split(",")
        if f[1] == leg and float(f[0]) in times_to_drop:
            continue
        kept.append(ln)
    path.write_text("".join(kept))


def test_missing_leg_samples_drop_frames_and_count(dataset, small_sim):
    drop = {float(small_sim.t[k]) for k in (10, 11, 200)}
    _drop_leg_rows(dataset / "legs.csv", drop)
    stream = read_stream(dataset)
    frames = list(stream)
    assert stream.dropped == 3
    assert len(frames) == small_sim.t.size - 3
    assert not drop & {f.t for f in frames}


def test_leg_records_within_tolerance_are_merged(tmp_path):
    (tmp_path / "imu.csv").write_text("t,ax,ay,az,wx,wy,wz\n0.0,0,0,9.8,0,0,0\n0.002,0,0,9.8,0,0,0\n")
    rows = ["t,leg,q1,q2,q3,dq1,dq2,dq3,force"]
    for t in (0.0004, 0.0021):
        for leg in LEG_ORDER:
            rows.append(f"{t},{leg.value},0,0.7,-1.4,0,0,0,50")
    (tmp_path / "legs.csv").write_text("\n".join(rows) + "\n")
    frames = list(FrameStream(tmp_path / "imu.csv", tmp_path / "legs.csv"))
    assert [f.legs[0].t for f in frames] == [0.0004, 0.0021]


def test_non_increasing_imu_time_reports_line(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text("t,ax,ay,az,wx,wy,wz\n0.0,0,0,9.8,0,0,0\n0.002,0,0,9.8,0,0,0\n0.002,0,0,9.8,0,0,0\n")
    with pytest.raises(DataError) as info:
        list(read_imu(p))
    assert info.value.line == 4
    assert "does not increase" in str(info.value)


def test_bad_header_and_fields(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text("time,ax,ay,az,wx,wy,wz\n")
    with pytest.raises(DataError, match="bad header"):
        list(read_imu(p))
    p.write_text("t,ax,ay,az,wx,wy,wz\n0.0,0,0,abc,0,0,0\n")
    with pytest.raises(DataError, match="non-numeric") as info:
        list(read_imu(p))
    assert info.value.line == 2
    p.write_text("t,ax,ay,az,wx,wy,wz\n0.0,0,0,nan,0,0,0\n")
    with pytest.raises(DataError, match="non-finite"):
        list(read_imu(p))


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        DatasetManifest.load(tmp_path / "nope")
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError, match="imu stream not found"):
        DatasetManifest.load(tmp_path / "empty")


# ----------------------------------------------------------------- trajectory files


def test_identity_pose_line(tmp_path):
    traj = Trajectory(np.array([0.0]), np.zeros((1, 3)), np.eye(3)[None])
    path = tmp_path / "traj.txt"
    write_trajectory(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "0.000000 0 0 0 1 0 0 0"


def test_trajectory_round_trip(tmp_path, rng):
    n = 50
    R = np.array([random_rotation(rng) for _ in range(n)])
    traj = Trajectory(np.arange(n) * 0.002, rng.normal(size=(n, 3)) * 10, R)
    path = tmp_path / "traj.txt"
    write_trajectory(traj, path, header="detector=fused\nsigma_base=1.0")
    back = read_trajectory(path)
    assert np.allclose(back.t, traj.t, atol=1e-6)
    assert np.array_equal(back.p, traj.p)
    assert np.max(np.abs(back.R - R)) < 1e-12
    # canonical hemisphere
    for ln in path.read_text().splitlines():
        if not ln.startswith("#"):
            assert float(ln.split()[4]) >= 0.0


def test_trajectory_comments_and_blank_lines(tmp_path):
    path = tmp_path / "traj.txt"
    path.write_text("# header\n\n0.0 1 2 3 1 0 0 0  # trailing\n   \n0.1 1 2 3 0 1 0 0\n")
    traj = read_trajectory(path)
    assert len(traj) == 2
    assert np.allclose(traj.R[1], np.diag([1.0, -1.0, -1.0]))


def test_trajectory_rejects_bad_quaternion(tmp_path):
    path = tmp_path / "traj.txt"
    path.write_text("0.0 0 0 0 1 0 0 0\n0.1 0 0 0 1.01 0 0 0\n")
    with pytest.raises(DataError, match="quaternion norm") as info:
        read_trajectory(path)
    assert info.value.line == 2


def test_trajectory_rejects_wrong_field_count_and_time(tmp_path):
    path = tmp_path / "traj.txt"
    path.write_text("0.0 0 0 0 1 0 0\n")
    with pytest.raises(DataError, match="expected 8 fields"):
        read_trajectory(path)
    path.write_text("0.1 0 0 0 1 0 0 0\n0.1 0 0 0 1 0 0 0\n")
    with pytest.raises(DataError, match="does not increase"):
        read_trajectory(path)
    with pytest.raises(DataError, match="not found"):
        read_trajectory(path.with_name("missing.txt"))
