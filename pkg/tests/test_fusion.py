import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from legodo.contact_fsm import Phase
from legodo.eskf import GateConfig, NominalState, initial_covariance, zupt_update
from legodo.fusion import FusionConfig, adaptive_sigma, fuse

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_identity_case():
    a = fuse(1.0, 1.0, Phase.STANCE)
    assert a.q_final == 1.0 and a.sigma_i == 1.0
    assert np.array_equal(a.R_meas, np.eye(3))
    assert a.stance_gate


def test_exact_arithmetic():
    a = fuse(0.8, 0.5, Phase.STANCE, FusionConfig(sigma_base=1.0))
    assert a.q_final == 0.4
    assert a.sigma_i == 2.5
    assert np.array_equal(a.R_meas, 6.25 * np.eye(3))
    assert fuse(0.8, 0.5, Phase.STANCE, FusionConfig(sigma_base=2.0)).sigma_i == 5.0


def test_zero_glrt_score():
    a = fuse(0.9, 0.0, Phase.STANCE)
    assert a.q_final == 0.0
    assert a.sigma_i == 1e6
    assert fuse(0.3, 0.0, Phase.STANCE, FusionConfig(sigma_base=0.5)).sigma_i == 0.5e6


def test_gate_follows_fsm_phase():
    assert not fuse(1.0, 1.0, Phase.SWING).stance_gate
    # hysteresis band: FSM stance with q_fsm = 0 still attempts the update
    a = fuse(0.0, 1.0, Phase.STANCE)
    assert a.stance_gate and a.sigma_i == 1e6


def test_rejects_scores_outside_unit_interval():
    with pytest.raises(ValueError):
        adaptive_sigma(1.2, 0.5)
    with pytest.raises(ValueError):
        adaptive_sigma(0.5, -0.1)
    with pytest.raises(ValueError):
        FusionConfig(sigma_base=0.0)


@given(unit, unit, st.floats(0.01, 10.0))
def test_properties(qf, qg, base):
    cfg = FusionConfig(sigma_base=base)
    a = fuse(qf, qg, Phase.STANCE, cfg)
    assert abs(a.q_final - qf * qg) <= 1e-12
    assert a.q_final <= min(qf, qg)
    assert a.sigma_i == base / max(a.q_final, cfg.epsilon)
    assert a.sigma_i <= base / cfg.epsilon
    assert np.array_equal(a.R_meas, a.sigma_i**2 * np.eye(3))
    assert np.all(np.linalg.eigvalsh(a.R_meas) > 0)


@given(unit, unit)
def test_sigma_non_increasing_in_q(q1, q2):
    lo, hi = sorted((q1, q2))
    assert adaptive_sigma(hi, 1.0)[1] <= adaptive_sigma(lo, 1.0)[1]


def test_halving_quality_never_increases_correction(rng):
    for _ in range(200):
        s = NominalState(v=rng.normal(size=3) * 0.2)
        P = initial_covariance()
        v_rel = rng.normal(size=3) * 0.1
        p_foot = rng.normal(size=3) * 0.3
        q = rng.uniform(0.01, 1.0)
        full = fuse(q, 1.0, Phase.STANCE)
        half = fuse(0.5 * q, 1.0, Phase.STANCE)
        gate = GateConfig(1e12)
        a, _, _ = zupt_update(s, P, v_rel, p_foot, full.R_meas, gate)
        b, _, _ = zupt_update(s, P, v_rel, p_foot, half.R_meas, gate)
        da = np.concatenate([a.p - s.p, a.v - s.v])
        db = np.concatenate([b.p - s.p, b.v - s.v])
        assert np.linalg.norm(db) <= np.linalg.norm(da) + 1e-15
