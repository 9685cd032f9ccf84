import numpy as np
import pytest

from multiarm.kinematics import (
    DimensionMismatchError,
    EmptyObstacleSetError,
    NoPairsConfiguredError,
    ObstacleSnapshot,
    capsule_distance,
    forward_kinematics,
    geometric_jacobian,
    jacobian_dot,
    min_body_clearance,
    self_collision_distance,
    sphere_center_jacobian,
)

from conftest import planar_chain, random_spatial_chain


def chained_transform_oracle(model, q):
    """Independent forward kinematics: explicit 4x4 products Rx Tx Rz Tz."""
    t = np.eye(4)
    t[:3, :3] = model.base_rotation
    t[:3, 3] = model.base_position
    for i in range(model.n_joints):
        alpha, a, d, off = model.mdh[i]
        theta = off + q[i]
        rx = np.array([
            [1, 0, 0, 0],
            [0, np.cos(alpha), -np.sin(alpha), 0],
            [0, np.sin(alpha), np.cos(alpha), 0],
            [0, 0, 0, 1.0],
        ])
        tx = np.eye(4); tx[0, 3] = a
        rz = np.array([
            [np.cos(theta), -np.sin(theta), 0, 0],
            [np.sin(theta), np.cos(theta), 0, 0],
            [0, 0, 1, 0],
            [0, 0, 0, 1.0],
        ])
        tz = np.eye(4); tz[2, 3] = d
        t = t @ rx @ tx @ rz @ tz
    return t @ model.ee_offset


def obstacles(*spheres):
    centers = np.array([s[0] for s in spheres], dtype=float)
    radii = np.array([s[1] for s in spheres], dtype=float)
    return ObstacleSnapshot(centers, radii, np.zeros_like(centers))


# ---------------------------------------------------------------- forward kinematics

def test_fk_two_link_extended():
    model = planar_chain([1.0, 1.0])
    fs = forward_kinematics(model, [0.0, 0.0])
    np.testing.assert_allclose(fs.p, [2.0, 0.0, 0.0], atol=1e-15)


def test_fk_two_link_first_joint_quarter_turn():
    model = planar_chain([1.0, 1.0])
    fs = forward_kinematics(model, [np.pi / 2, 0.0])
    np.testing.assert_allclose(fs.p, [0.0, 2.0, 0.0], atol=1e-12)


def test_fk_matches_transform_product_oracle():
    rng = np.random.default_rng(10)
    for _ in range(20):
        model = random_spatial_chain(rng)
        q = rng.uniform(-2, 2, model.n_joints)
        fs = forward_kinematics(model, q)
        t = chained_transform_oracle(model, q)
        np.testing.assert_allclose(fs.p, t[:3, 3], atol=1e-12)
        np.testing.assert_allclose(fs.R, t[:3, :3], atol=1e-12)


def test_fk_dimension_mismatch():
    model = planar_chain([1.0, 1.0])
    with pytest.raises(DimensionMismatchError):
        forward_kinematics(model, [0.0, 0.0, 0.0])


def test_fk_sphere_count_matches_model():
    rng = np.random.default_rng(11)
    model = random_spatial_chain(rng)
    fs = forward_kinematics(model, np.zeros(model.n_joints))
    assert fs.sphere_centers.shape == (model.n_spheres, 3)


# ---------------------------------------------------------------- jacobian

def test_jacobian_planar_two_link_extended():
    model = planar_chain([1.0, 1.0])
    jac = geometric_jacobian(model, [0.0, 0.0])
    np.testing.assert_allclose(jac[:3], [[0, 0], [2, 1], [0, 0]], atol=1e-15)
    np.testing.assert_allclose(jac[3:], [[0, 0], [0, 0], [1, 1]], atol=1e-15)


def test_jacobian_matches_fk_finite_differences():
    rng = np.random.default_rng(12)
    h = 1e-6
    for _ in range(10):
        model = random_spatial_chain(rng)
        q = rng.uniform(-2, 2, model.n_joints)
        jac = geometric_jacobian(model, q)
        for k in range(model.n_joints):
            dq = np.zeros(model.n_joints)
            dq[k] = h
            fp = forward_kinematics(model, q + dq)
            fm = forward_kinematics(model, q - dq)
            lin = (fp.p - fm.p) / (2 * h)
            np.testing.assert_allclose(jac[:3, k], lin, atol=1e-6)
            rdot = (fp.R - fm.R) / (2 * h)
            omega_hat = rdot @ forward_kinematics(model, q).R.T
            ang = np.array([omega_hat[2, 1], omega_hat[0, 2], omega_hat[1, 0]])
            np.testing.assert_allclose(jac[3:, k], ang, atol=1e-6)


def test_zero_joint_velocity_gives_zero_twist():
    rng = np.random.default_rng(13)
    model = random_spatial_chain(rng)
    jac = geometric_jacobian(model, rng.uniform(-1, 1, model.n_joints))
    np.testing.assert_array_equal(jac @ np.zeros(model.n_joints), np.zeros(6))


# ---------------------------------------------------------------- jacobian dot

def test_jacobian_dot_zero_velocity():
    rng = np.random.default_rng(14)
    model = random_spatial_chain(rng)
    jd = jacobian_dot(model, rng.uniform(-1, 1, model.n_joints), np.zeros(model.n_joints))
    np.testing.assert_array_equal(jd, np.zeros((6, model.n_joints)))


def test_jacobian_dot_one_link_analytic():
    # single link about z: linear column is l*[-sin q, cos q, 0];
    # its time derivative is l*qd*[-cos q, -sin q, 0]
    model = planar_chain([1.0, 1.0])  # 2 joints, look at column 0 with qd2=0
    q = np.array([0.3, 0.0])
    qd = np.array([1.0, 0.0])
    jd = jacobian_dot(model, q, qd)
    # end effector at radius 2 from joint 1 when q2=0
    expected_col0 = 2.0 * qd[0] * np.array([-np.cos(q[0]), -np.sin(q[0]), 0.0])
    np.testing.assert_allclose(jd[:3, 0], expected_col0, atol=1e-6)


def test_jacobian_dot_matches_flow_finite_difference():
    rng = np.random.default_rng(15)
    h = 1e-6
    for _ in range(10):
        model = random_spatial_chain(rng)
        q = rng.uniform(-2, 2, model.n_joints)
        qd = rng.normal(size=model.n_joints)
        jd = jacobian_dot(model, q, qd)
        ref = (geometric_jacobian(model, q + h * qd) - geometric_jacobian(model, q - h * qd)) / (2 * h)
        np.testing.assert_allclose(jd, ref, atol=1e-9)


def test_jacobian_dot_against_independent_trajectory_derivative():
    # relative-tolerance check of J*qd differentiated along a real trajectory
    rng = np.random.default_rng(16)
    model = random_spatial_chain(rng)
    q = rng.uniform(-1.5, 1.5, model.n_joints)
    qd = rng.normal(size=model.n_joints)
    h = 1e-5
    jd = jacobian_dot(model, q, qd)
    num = (geometric_jacobian(model, q + h * qd) - geometric_jacobian(model, q - h * qd)) / (2 * h)
    denom = max(np.linalg.norm(num), 1.0)
    assert np.linalg.norm(jd - num) / denom < 1e-5


# ---------------------------------------------------------------- clearances

def test_min_body_clearance_arithmetic():
    model = planar_chain([1.0, 1.0], spheres=[(0, [0.0, 0.0, 0.0], 0.1)])
    d, k, o = min_body_clearance(model, [0.0, 0.0], obstacles(([0.0, 0.0, 0.5], 0.0)))
    assert d == pytest.approx(0.4, abs=1e-12)
    assert (k, o) == (0, 0)


def test_min_body_clearance_boundary_zero():
    model = planar_chain([1.0, 1.0], spheres=[(0, [0.0, 0.0, 0.0], 0.1)])
    d, _, _ = min_body_clearance(model, [0.0, 0.0], obstacles(([0.0, 0.0, 0.1], 0.0)))
    assert d == pytest.approx(0.0, abs=1e-12)


def test_min_body_clearance_obstacle_radius_added():
    model = planar_chain([1.0, 1.0], spheres=[(0, [0.0, 0.0, 0.0], 0.1)])
    d, _, _ = min_body_clearance(model, [0.0, 0.0], obstacles(([0.0, 0.0, 0.5], 0.2)))
    assert d == pytest.approx(0.2, abs=1e-12)


def test_min_body_clearance_tie_breaks_lexicographic():
    model = planar_chain(
        [1.0, 1.0],
        spheres=[(0, [0.0, 0.0, 0.0], 0.1), (0, [0.1, 0.0, 0.0], 0.1)],
    )
    # both obstacles exactly 0.4 from sphere 0, and obstacle 1 is 0.4 from sphere 1 too
    obs = obstacles(([0.0, 0.0, 0.5], 0.0), ([0.0, 0.0, -0.5], 0.0))
    d, k, o = min_body_clearance(model, [0.0, 0.0], obs)
    assert d == pytest.approx(0.4, abs=1e-12)
    assert (k, o) == (0, 0)


def test_min_body_clearance_empty_set():
    model = planar_chain([1.0, 1.0])
    empty = ObstacleSnapshot(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))
    with pytest.raises(EmptyObstacleSetError):
        min_body_clearance(model, [0.0, 0.0], empty)


def test_min_body_clearance_lipschitz_in_obstacle():
    rng = np.random.default_rng(17)
    model = random_spatial_chain(rng)
    q = rng.uniform(-1, 1, model.n_joints)
    base = np.array([0.5, 0.2, 0.3])
    d0, _, _ = min_body_clearance(model, q, obstacles((base, 0.05)))
    for _ in range(100):
        delta = rng.normal(size=3) * 0.1
        d1, _, _ = min_body_clearance(model, q, obstacles((base + delta, 0.05)))
        assert abs(d1 - d0) <= np.linalg.norm(delta) + 1e-12


def test_clearance_continuous_in_q():
    rng = np.random.default_rng(18)
    model = random_spatial_chain(rng)
    obs = obstacles(([0.4, 0.0, 0.2], 0.05))
    q = rng.uniform(-1, 1, model.n_joints)
    fs = forward_kinematics(model, q)
    lip = max(np.linalg.norm(sphere_center_jacobian(model, fs, k), 2)
              for k in range(model.n_spheres))
    d0, _, _ = min_body_clearance(model, q, obs)
    for _ in range(50):
        dq = rng.normal(size=model.n_joints)
        dq *= 1e-4 / np.linalg.norm(dq)
        d1, _, _ = min_body_clearance(model, q + dq, obs)
        assert abs(d1 - d0) <= 1.5 * lip * np.linalg.norm(dq) + 1e-9


def test_sphere_center_jacobian_finite_difference():
    rng = np.random.default_rng(19)
    h = 1e-6
    model = random_spatial_chain(rng)
    q = rng.uniform(-1.5, 1.5, model.n_joints)
    fs = forward_kinematics(model, q)
    for k in range(model.n_spheres):
        jac = sphere_center_jacobian(model, fs, k)
        for j in range(model.n_joints):
            dq = np.zeros(model.n_joints); dq[j] = h
            cp = forward_kinematics(model, q + dq).sphere_centers[k]
            cm = forward_kinematics(model, q - dq).sphere_centers[k]
            np.testing.assert_allclose(jac[:, j], (cp - cm) / (2 * h), atol=1e-6)


# ---------------------------------------------------------------- self collision

def test_capsule_distance_parallel_unit_segments():
    d = capsule_distance([0, 0, 0], [1, 0, 0], 0.1, [0, 1, 0], [1, 1, 0], 0.1)
    assert d == pytest.approx(0.8, abs=1e-12)


def test_capsule_distance_intersecting_segments():
    d = capsule_distance([-1, 0, 0], [1, 0, 0], 0.1, [0, -1, 0], [0, 1, 0], 0.1)
    assert d == pytest.approx(-0.2, abs=1e-12)


def test_self_collision_distance_matches_sampling_oracle():
    rng = np.random.default_rng(20)
    for _ in range(10):
        model = random_spatial_chain(rng)
        q = rng.uniform(-2, 2, model.n_joints)
        d, pair = self_collision_distance(model, q)
        fs = forward_kinematics(model, q)
        best = np.inf
        ts = np.linspace(0, 1, 32)
        from multiarm.kinematics import capsule_segment
        for (i, j) in model.nonadjacent_pairs:
            a0, a1 = capsule_segment(model, fs, i)
            b0, b1 = capsule_segment(model, fs, j)
            pa = a0[None] + ts[:, None] * (a1 - a0)[None]
            pb = b0[None] + ts[:, None] * (b1 - b0)[None]
            dist = np.linalg.norm(pa[:, None] - pb[None], axis=2).min()
            best = min(best, dist - model.capsule_radius[i] - model.capsule_radius[j])
        assert d <= best + 1e-12
        assert abs(d - best) < 1e-3


def test_self_collision_requires_pairs():
    model = planar_chain([1.0, 1.0])
    with pytest.raises(NoPairsConfiguredError):
        self_collision_distance(model, [0.0, 0.0])


def test_model_validate_flags_bad_invariants():
    model = planar_chain([1.0, 1.0])
    assert model.validate() == []
    bad = planar_chain([1.0])
    assert any("n_joints" in p for p in bad.validate())
