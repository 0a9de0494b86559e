import numpy as np

from bilateral_il.dataset import EpisodeLog


def synthetic_episode(contact, theta_joint=None, joint=7, dt=0.002, dof=8, seed=0, meta=None):
    """An episode whose only meaningful channels are the contact torque and
    the follower angle on the contact joint; the rest is seeded noise."""
    contact = np.asarray(contact, dtype=float)
    n = len(contact)
    rng = np.random.default_rng(seed)
    blocks = [rng.normal(0, 0.1, (n, 3 * dof)) for _ in range(4)]
    if theta_joint is not None:
        blocks[1][:, joint] = theta_joint
    return EpisodeLog(dt, np.arange(n) * dt, *blocks, contact, dict(meta or {}))
