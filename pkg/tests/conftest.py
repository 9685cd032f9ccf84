import numpy as np
import pytest

from multiarm.kinematics import ManipulatorModel


def planar_chain(lengths, masses=None, coms=None, gravity=(0.0, -9.81, 0.0),
                 spheres=None, pairs=(), qd_max=10.0, tau=200.0):
    """Planar chain in the x-y plane, all joints about +z.

    Link i has length lengths[i]; per-link point masses sit at the distal
    end unless coms is given. Hand-computable: p_ee = sum_i l_i * e(sum q).
    """
    lengths = list(lengths)
    n = len(lengths)
    mdh = np.zeros((n, 4))
    for i in range(1, n):
        mdh[i, 1] = lengths[i - 1]
    ee = np.eye(4)
    ee[0, 3] = lengths[-1]
    if masses is None:
        masses = np.ones(n)
    if coms is None:
        coms = np.array([[lengths[i], 0.0, 0.0] for i in range(n)])
    if spheres is None:
        sphere_link = np.array([n], dtype=np.int64)
        sphere_local = np.zeros((1, 3))
        sphere_radius = np.array([0.05])
    else:
        sphere_link = np.array([s[0] for s in spheres], dtype=np.int64)
        sphere_local = np.array([s[1] for s in spheres], dtype=float)
        sphere_radius = np.array([s[2] for s in spheres], dtype=float)
    return ManipulatorModel(
        mdh=mdh,
        mass=np.asarray(masses, dtype=float),
        com=np.asarray(coms, dtype=float),
        inertia=np.zeros((n, 3, 3)),
        sphere_link=sphere_link,
        sphere_local=sphere_local,
        sphere_radius=sphere_radius,
        q_min=-np.full(n, np.pi),
        q_max=np.full(n, np.pi),
        qd_max=qd_max,
        tau_min=-np.full(n, tau),
        tau_max=np.full(n, tau),
        nonadjacent_pairs=pairs,
        ee_offset=ee,
        gravity=np.asarray(gravity, dtype=float),
    )


def random_spatial_chain(rng, n=5, with_spheres=True):
    """Arbitrary spatial chain for oracle comparisons."""
    mdh = np.column_stack([
        rng.uniform(-np.pi, np.pi, n),
        rng.uniform(-0.4, 0.4, n),
        rng.uniform(-0.4, 0.4, n),
        rng.uniform(-np.pi, np.pi, n),
    ])
    ee = np.eye(4)
    ee[:3, 3] = rng.uniform(-0.2, 0.2, 3)
    if with_spheres:
        k = 4
        sphere_link = rng.integers(0, n + 1, k)
        sphere_local = rng.uniform(-0.2, 0.2, (k, 3))
        sphere_radius = rng.uniform(0.02, 0.1, k)
    else:
        sphere_link = np.array([n])
        sphere_local = np.zeros((1, 3))
        sphere_radius = np.array([0.05])
    inertia = np.zeros((n, 3, 3))
    for i in range(n):
        a = rng.normal(size=(3, 3)) * 0.05
        inertia[i] = a @ a.T + 0.01 * np.eye(3)
    return ManipulatorModel(
        mdh=mdh,
        mass=rng.uniform(0.5, 3.0, n),
        com=rng.uniform(-0.2, 0.2, (n, 3)),
        inertia=inertia,
        sphere_link=sphere_link.astype(np.int64),
        sphere_local=sphere_local,
        sphere_radius=sphere_radius,
        q_min=-np.full(n, 2.5),
        q_max=np.full(n, 2.5),
        qd_max=5.0,
        tau_min=-np.full(n, 100.0),
        tau_max=np.full(n, 100.0),
        nonadjacent_pairs=((0, 2), (0, 3), (1, 3)) if n >= 4 else ((0, 2),),
    )


@pytest.fixture(scope="session")
def franka_model():
    from multiarm.config import load_scenario, shipped_scenario_path
    cfg = load_scenario(shipped_scenario_path("dual_arm"))
    return cfg.agents[0].model
