import numpy as np

from app.flock import FlockState


def line_state(positions, velocities):
    """One-dimensional flock from plain lists."""
    return FlockState(np.reshape(positions, (-1, 1)), np.reshape(velocities, (-1, 1)))


def random_state(N: int, d: int = 2, seed: int = 0, scale: float = 1.0) -> FlockState:
    rng = np.random.default_rng(seed)
    return FlockState(scale * rng.uniform(-1.0, 1.0, (N, d)), scale * rng.uniform(-1.0, 1.0, (N, d)))


def consensus_state(N: int, d: int = 2, velocity=None, seed: int = 0) -> FlockState:
    """Random positions, every agent moving with the same velocity."""
    rng = np.random.default_rng(seed)
    velocity = np.ones(d) if velocity is None else np.asarray(velocity, dtype=float)
    return FlockState(rng.uniform(-1.0, 1.0, (N, d)), np.tile(velocity, (N, 1)))


def random_symmetric_weights(N: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 1.0, (N, N))
    return 0.5 * (w + w.T)
