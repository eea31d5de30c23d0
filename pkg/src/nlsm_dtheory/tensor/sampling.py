"""Perfect sampling of computational-basis outcomes from an MPS.

Shot ``k`` of a batch draws its uniforms from a Philox stream keyed by
``(seed, k)``, so any subset of shots can be regenerated independently.
"""

from __future__ import annotations

import numpy as np

from .mps import MPS


class UnnormalizedStateError(ValueError):
    pass


def shot_rng(seed: int, shot: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(shot)]))


def _prepared(psi: MPS) -> MPS:
    phi = psi.copy()
    phi.canonicalize(0)
    nrm = phi.norm()
    if abs(nrm - 1.0) > 1e-8:
        raise UnnormalizedStateError(f"state norm {nrm:.12f} differs from 1")
    return phi


def _sample(phi: MPS, uniforms: np.ndarray) -> np.ndarray:
    """Sequential conditional sampling for a batch; ``uniforms`` is (shots, sites)."""
    n_shots, n = uniforms.shape
    out = np.zeros((n_shots, n), dtype=np.int8)
    env = np.ones((n_shots, 1), dtype=phi.dtype)
    for j, A in enumerate(phi.tensors):
        v0 = env @ A[:, 0, :]
        v1 = env @ A[:, 1, :]
        p0 = np.sum(np.abs(v0) ** 2, axis=1)
        p1 = np.sum(np.abs(v1) ** 2, axis=1)
        tot = p0 + p1
        up = uniforms[:, j] * tot >= p0
        out[:, j] = up
        env = np.where(up[:, None], v1, v0)
        env /= np.sqrt(np.where(up, p1, p0))[:, None]
    return out


def sample_shot(psi: MPS, rng: np.random.Generator) -> np.ndarray:
    """One spin-basis bitstring (1 = up) in chain order."""
    phi = _prepared(psi)
    return _sample(phi, rng.random((1, phi.n_sites)))[0]


def sample_shots(psi: MPS, n_shots: int, seed: int, first_shot: int = 0, batch: int = 1024) -> np.ndarray:
    """``n_shots`` bitstrings; row ``k`` depends only on ``(seed, first_shot + k)``."""
    phi = _prepared(psi)
    n = phi.n_sites
    out = np.empty((n_shots, n), dtype=np.int8)
    for start in range(0, n_shots, batch):
        stop = min(n_shots, start + batch)
        u = np.stack([shot_rng(seed, first_shot + k).random(n) for k in range(start, stop)])
        out[start:stop] = _sample(phi, u)
    return out


def bitstrings(bits: np.ndarray) -> list[str]:
    return ["".join(str(int(b)) for b in row) for row in np.atleast_2d(bits)]
