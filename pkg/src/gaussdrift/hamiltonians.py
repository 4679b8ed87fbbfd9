"""Hamiltonian models evaluated on full interleaved phase-space vectors.

``hessian`` returns half the matrix of second derivatives so that the
covariance equations of motion can be written with their usual factor 2.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .phasespace import InvalidDimensionError

PARTICLE_BLOCK = 6  # 3 axes x (r, p)


class HamiltonianModel(ABC):
    @abstractmethod
    def value(self, x: np.ndarray) -> float: ...

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray:
        """Half the second-derivative matrix of ``value`` at ``x``."""

    def lagrangian(self, x: np.ndarray) -> float:
        """Phase-space Lagrangian ``p . dH/dp - H``."""
        g = self.gradient(x)
        return float(x[1::2] @ g[1::2] - self.value(x))


def _check_even(x: np.ndarray, n: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % 2 or (n is not None and x.size != n):
        raise InvalidDimensionError(f"bad phase-space vector of shape {x.shape}")
    return x


@dataclass(frozen=True)
class QuadraticModel(HamiltonianModel):
    """Separable ``sum p_i^2 / 2m + m omega^2 r_i^2 / 2``; omega = 0 gives free motion."""

    n_dof: int
    mass: float = 1.0
    omega: float = 1.0

    def _diag(self) -> np.ndarray:
        return np.tile([self.mass * self.omega**2, 1.0 / self.mass], self.n_dof)

    def value(self, x):
        x = _check_even(x, 2 * self.n_dof)
        return float(0.5 * (self._diag() * x * x).sum())

    def gradient(self, x):
        x = _check_even(x, 2 * self.n_dof)
        return self._diag() * x

    def hessian(self, x):
        _check_even(x, 2 * self.n_dof)
        return np.diag(0.5 * self._diag())


def HarmonicOscillator(n_dof: int, mass: float = 1.0, omega: float = 1.0) -> QuadraticModel:
    return QuadraticModel(n_dof, mass, omega)


def FreeParticle(n_dof: int, mass: float = 1.0) -> QuadraticModel:
    return QuadraticModel(n_dof, mass, 0.0)


@dataclass(frozen=True)
class ExperimentHamiltonian(HamiltonianModel):
    """3D isotropic oscillator coupled to free bath particles by Gaussian pair terms.

    The first 6 entries of a phase vector belong to the system particle; every
    further block of 6 is one bath particle.  The bath size is read from the
    vector length, so one instance serves every registry.
    """

    epsilon: float = 1.0
    width: float = 25.0
    m_env: float = 1.0

    @staticmethod
    def n_bath(x: np.ndarray) -> int:
        if x.ndim != 1 or x.size % PARTICLE_BLOCK or x.size == 0:
            raise InvalidDimensionError(f"length {x.size} is not a multiple of {PARTICLE_BLOCK}")
        return x.size // PARTICLE_BLOCK - 1

    def _pairs(self, x):
        blocks = x.reshape(-1, 3, 2)
        sep = blocks[0, :, 0][None, :] - blocks[1:, :, 0]  # (k, 3) system minus bath
        pot = self.epsilon * np.exp(-(sep * sep).sum(axis=1) / (2 * self.width**2))
        return blocks, sep, pot

    def pair_potential(self, separation: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(separation)
        return self.epsilon * np.exp(-(s * s).sum(axis=-1) / (2 * self.width**2))

    def value(self, x):
        x = _check_even(x)
        self.n_bath(x)
        blocks, _, pot = self._pairs(x)
        e = 0.5 * (blocks[0] ** 2).sum()
        e += 0.5 * (blocks[1:, :, 1] ** 2).sum() / self.m_env
        return float(e + pot.sum())

    def gradient(self, x):
        x = _check_even(x)
        self.n_bath(x)
        blocks, sep, pot = self._pairs(x)
        g = np.empty_like(blocks)
        force = -(pot / self.width**2)[:, None] * sep  # dV/d(sep)
        g[0, :, 0] = blocks[0, :, 0] + force.sum(axis=0)
        g[0, :, 1] = blocks[0, :, 1]
        g[1:, :, 0] = -force
        g[1:, :, 1] = blocks[1:, :, 1] / self.m_env
        return g.reshape(-1)

    def hessian(self, x):
        x = _check_even(x)
        k = self.n_bath(x)
        _, sep, pot = self._pairs(x)
        n = x.size
        full = np.zeros((n, n))
        r_sys = np.arange(0, 6, 2)
        full[r_sys, r_sys] = 1.0
        full[r_sys + 1, r_sys + 1] = 1.0
        w2 = self.width**2
        for j in range(k):
            curv = pot[j] * (np.outer(sep[j], sep[j]) / w2**2 - np.eye(3) / w2)
            r_b = 6 * (j + 1) + r_sys
            full[np.ix_(r_sys, r_sys)] += curv
            full[np.ix_(r_b, r_b)] += curv
            full[np.ix_(r_sys, r_b)] -= curv
            full[np.ix_(r_b, r_sys)] -= curv
            full[r_b + 1, r_b + 1] = 1.0 / self.m_env
        return 0.5 * full
