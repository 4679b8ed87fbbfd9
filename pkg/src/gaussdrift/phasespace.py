"""Gaussian phase-space primitives.

Phase-space vectors use interleaved ordering ``[r1, p1, r2, p2, ...]`` and
units with hbar = m_sys = omega = 1.  A Gaussian operator ``|a><b|`` is carried
by the two classical branch centres ``x_alpha``/``x_beta``, a complex symmetric
covariance, a phase and a log-amplitude.  Its Weyl symbol is

    W(x) = weight * N * exp(-1/2 (x-c)^T Sigma^-1 (x-c) + eta + log_amp + i*phase)

with ``N = 1 / ((2 pi)^d sqrt(det Sigma))`` so that ``Tr rho = weight *
exp(eta + log_amp + i*phase)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np

HBAR = 1.0


class InvalidDimensionError(ValueError):
    pass


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def symplectic_form(n_dof: int) -> np.ndarray:
    """Block-diagonal symplectic matrix with ``n_dof`` blocks ``[[0, 1], [-1, 0]]``."""
    if int(n_dof) != n_dof or n_dof < 1:
        raise InvalidDimensionError(f"n_dof must be a positive integer, got {n_dof!r}")
    S = np.zeros((2 * n_dof, 2 * n_dof))
    i = np.arange(n_dof)
    S[2 * i, 2 * i + 1] = 1.0
    S[2 * i + 1, 2 * i] = -1.0
    return S


def apply_symplectic(v: np.ndarray) -> np.ndarray:
    """Return ``S @ v`` for a vector (or along axis 0 of a matrix) without forming S."""
    if v.shape[0] % 2:
        raise InvalidDimensionError(f"odd phase-space length {v.shape[0]}")
    out = np.empty_like(v)
    out[0::2] = v[1::2]
    out[1::2] = -v[0::2]
    return out


def positions(x: np.ndarray) -> np.ndarray:
    return x[0::2]


def momenta(x: np.ndarray) -> np.ndarray:
    return x[1::2]


def coherent_covariance(n_dof: int) -> np.ndarray:
    return 0.5 * HBAR * np.eye(2 * n_dof)


def wavepacket_covariance(width: float, n_dof: int) -> np.ndarray:
    """Minimum-uncertainty covariance with position spread ``width`` on every axis."""
    diag = np.tile([width**2, HBAR**2 / (4.0 * width**2)], n_dof)
    return np.diag(diag)


def log_sqrt_det(sigma: np.ndarray) -> complex:
    """``log sqrt(det sigma)`` on the branch continuous from real positive matrices.

    For a complex symmetric matrix with positive definite real part every pivot of
    the unpivoted LDL^T factorisation has positive real part, so summing principal
    logarithms of the pivots gives the branch connected to the real case.
    """
    a = np.array(sigma, dtype=complex)
    n = a.shape[0]
    acc = 0.0 + 0.0j
    for k in range(n):
        piv = a[k, k]
        if piv == 0:
            raise SingularCovarianceError("covariance is singular")
        acc += np.log(piv)
        if k + 1 < n:
            col = a[k + 1 :, k] / piv
            a[k + 1 :, k + 1 :] -= np.outer(col, a[k, k + 1 :])
    return 0.5 * acc


@dataclass(frozen=True)
class TraceLedger:
    """Record of partial-trace corrections.

    ``centroid_offset`` is the correction to the complex centroid over the
    retained coordinates.  It is a dynamical quantity and is carried through
    the integrator once the first particle has been traced out.
    ``eta_offset`` and ``norm_log`` record what was folded into the operator's
    log-amplitude and phase at drop times.
    """

    centroid_offset: np.ndarray | None = None
    eta_offset: complex = 0j
    norm_log: float = 0.0
    n_drops: int = 0

    @property
    def is_empty(self) -> bool:
        return self.n_drops == 0

    def offset(self, dim: int) -> np.ndarray:
        if self.centroid_offset is None:
            return np.zeros(dim, dtype=complex)
        return self.centroid_offset


@dataclass(frozen=True)
class GaussianOperator:
    """One component ``weight * |alpha><beta|`` of a Gaussian expansion."""

    x_alpha: np.ndarray
    x_beta: np.ndarray
    sigma: np.ndarray
    phase: float = 0.0
    log_amp: float = 0.0
    ledger: TraceLedger = field(default_factory=TraceLedger)
    weight: complex = 1.0 + 0j
    registry: tuple[Hashable, ...] = (0,)

    def __post_init__(self):
        xa = np.asarray(self.x_alpha, dtype=float)
        xb = np.asarray(self.x_beta, dtype=float)
        sig = np.asarray(self.sigma)
        n = xa.shape[0]
        if xa.shape != (n,) or xb.shape != (n,) or n % 2:
            raise InvalidDimensionError("branch vectors must be 1-d, equal and even in length")
        if sig.shape != (n, n):
            raise InvalidDimensionError(f"sigma has shape {sig.shape}, expected {(n, n)}")
        if self.registry and n % len(self.registry):
            raise InvalidDimensionError("phase-space length not divisible by registry size")
        object.__setattr__(self, "x_alpha", xa)
        object.__setattr__(self, "x_beta", xb)
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "registry", tuple(self.registry))

    @property
    def dim(self) -> int:
        return self.x_alpha.shape[0]

    @property
    def n_dof(self) -> int:
        return self.dim // 2

    @property
    def block_size(self) -> int:
        return self.dim // len(self.registry)

    def block_indices(self, particle_id) -> np.ndarray:
        try:
            k = self.registry.index(particle_id)
        except ValueError:
            raise KeyError(f"unknown particle id {particle_id!r}") from None
        b = self.block_size
        return np.arange(k * b, (k + 1) * b)

    def replace(self, **changes) -> GaussianOperator:
        return replace(self, **changes)

    @classmethod
    def coherent_pair(cls, x_alpha, x_beta, weight=1.0 + 0j, registry=(0,)) -> GaussianOperator:
        xa = np.asarray(x_alpha, dtype=float)
        return cls(xa, x_beta, coherent_covariance(xa.shape[0] // 2), weight=weight,
                   registry=registry)


def eta_factor(x_alpha: np.ndarray, x_beta: np.ndarray, sigma: np.ndarray) -> complex:
    """Complex log-overlap factor multiplying an off-diagonal Weyl symbol."""
    x_alpha = np.asarray(x_alpha, dtype=float)
    x_beta = np.asarray(x_beta, dtype=float)
    if x_alpha.shape != x_beta.shape or sigma.shape != (x_alpha.size, x_alpha.size):
        raise InvalidDimensionError("inconsistent dimensions")
    d = x_alpha - x_beta
    Sd = apply_symplectic(d)
    # S^T = -S, so d^T S Sigma S d = -(S d)^T Sigma (S d)
    quad = -(Sd @ sigma @ Sd)
    p_sum = momenta(x_alpha) + momenta(x_beta)
    r_diff = positions(x_alpha) - positions(x_beta)
    return complex(quad / (2 * HBAR**2) - 0.5j / HBAR * (p_sum @ r_diff))


def centroid(g: GaussianOperator) -> np.ndarray:
    """Complex centre of the Weyl symbol, including post-trace corrections."""
    d = g.x_alpha - g.x_beta
    c = 0.5 * (g.x_alpha + g.x_beta) + (1j / HBAR) * (g.sigma @ apply_symplectic(d))
    return c + g.ledger.offset(g.dim)


def log_trace(g: GaussianOperator) -> complex:
    """``log Tr rho`` for the represented operator."""
    return (np.log(complex(g.weight)) + eta_factor(g.x_alpha, g.x_beta, g.sigma)
            + g.log_amp + 1j * g.phase)


def wigner_eval(g: GaussianOperator, point) -> complex:
    point = np.asarray(point, dtype=float)
    if point.shape != (g.dim,):
        raise InvalidDimensionError(f"point has shape {point.shape}, expected {(g.dim,)}")
    try:
        lam = np.linalg.inv(g.sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    y = point - centroid(g)
    log_norm = -g.n_dof * np.log(2 * np.pi) - log_sqrt_det(g.sigma)
    return complex(np.exp(log_norm - 0.5 * (y @ lam @ y) + log_trace(g)))


@dataclass(frozen=True)
class _Prepared:
    lam: np.ndarray
    lam_c: np.ndarray
    c_lam_c: complex
    log_pref: complex


def _prepare(g: GaussianOperator) -> _Prepared:
    try:
        lam = np.linalg.inv(g.sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    c = centroid(g)
    lam_c = lam @ c
    log_pref = -g.n_dof * np.log(2 * np.pi) - log_sqrt_det(g.sigma) + log_trace(g)
    return _Prepared(lam, lam_c, complex(c @ lam_c), complex(log_pref))


def prepare_batch(ops: Sequence[GaussianOperator]):
    """Stack the per-operator quantities used by pairwise Hilbert-Schmidt products."""
    prep = [_prepare(g) for g in ops]
    lam = np.stack([p.lam for p in prep])
    lam_c = np.stack([p.lam_c for p in prep])
    c_lam_c = np.array([p.c_lam_c for p in prep])
    log_pref = np.array([p.log_pref for p in prep])
    return lam, lam_c, c_lam_c, log_pref


def _log_hs(pa: _Prepared, pb: _Prepared, n_dof: int) -> complex:
    K = pa.lam + pb.lam.conj()
    b = pa.lam_c + pb.lam_c.conj()
    try:
        Kinv_b = np.linalg.solve(K, b)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    log_int = n_dof * np.log(2 * np.pi) - log_sqrt_det(K) + 0.5 * (b @ Kinv_b)
    log_int -= 0.5 * (pa.c_lam_c + np.conj(pb.c_lam_c))
    return complex(n_dof * np.log(2 * np.pi * HBAR) + pa.log_pref + np.conj(pb.log_pref) + log_int)


def hs_inner(g1: GaussianOperator, g2: GaussianOperator) -> complex:
    """Hilbert-Schmidt product ``Tr(A B^dagger)`` of two Gaussian operators."""
    if g1.dim != g2.dim:
        raise InvalidDimensionError("operators have different dimensions")
    return complex(np.exp(_log_hs(_prepare(g1), _prepare(g2), g1.n_dof)))
