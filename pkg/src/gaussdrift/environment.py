"""Bath sampling, vicinity bookkeeping, particle injection and partial traces."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .hamiltonians import PARTICLE_BLOCK
from .phasespace import (HBAR, GaussianOperator, InvalidDimensionError, apply_symplectic,
                         eta_factor, wavepacket_covariance)

log = logging.getLogger(__name__)

SYSTEM_ID = 0


@dataclass(frozen=True)
class BathParams:
    temperature: float = 400.0
    density: float = 2e-7
    m_env: float = 1.0
    env_width: float = 5.0
    vicinity_radius: float = 62.5
    max_active: int = 1
    mode: str = "flux"
    roster_size: int = 1500
    interaction_width: float | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("bath.temperature must be >= 0")
        if self.density < 0:
            raise ValueError("bath.density must be >= 0")
        for name in ("m_env", "env_width", "vicinity_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_active < 1:
            raise ValueError("vicinity.max_active must be >= 1")
        if self.mode not in ("flux", "roster"):
            raise ValueError("bath.mode must be 'flux' or 'roster'")
        if self.roster_size < 0:
            raise ValueError("bath.roster_size must be >= 0")
        w = self.interaction_width
        if w is not None and self.vicinity_radius <= w:
            log.warning("vicinity radius %.3g does not exceed the interaction width %.3g",
                        self.vicinity_radius, w)

    @property
    def thermal_speed_var(self) -> float:
        return self.temperature / self.m_env

    @property
    def mean_speed(self) -> float:
        return math.sqrt(8.0 * self.thermal_speed_var / math.pi)

    @property
    def injection_rate(self) -> float:
        """Wall flux into the vicinity sphere: n * 4 pi R^2 * <v> / 4."""
        return self.density * math.pi * self.vicinity_radius**2 * self.mean_speed


def dof_count(k_active: int) -> int:
    """Real ODE count for one system particle plus ``k_active`` bath particles in 3D."""
    if k_active < 0:
        raise ValueError("k_active must be >= 0")
    d = PARTICLE_BLOCK * (k_active + 1)
    return d * (d + 1) + 2 * d + 2


def particle_block(position, momentum) -> np.ndarray:
    x = np.empty(PARTICLE_BLOCK)
    x[0::2] = position
    x[1::2] = momentum
    return x


def sample_bath(params: BathParams, rng: np.random.Generator, box, n: int | None = None):
    """Uniform positions in ``box`` (array of shape (3, 2): low/high per axis) with
    Maxwell-Boltzmann momenta.  ``n`` defaults to a Poisson draw with mean
    density * volume.  Returns a list of (phase block, covariance block)."""
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    if n is None:
        n = rng.poisson(params.density * float(np.prod(hi - lo)))
    pos = rng.uniform(lo, hi, size=(n, 3))
    mom = rng.normal(0.0, math.sqrt(params.m_env * params.temperature), size=(n, 3))
    cov = wavepacket_covariance(params.env_width, 3)
    return [(particle_block(pos[i], mom[i]), cov.copy()) for i in range(n)]


def sample_ball(params: BathParams, rng: np.random.Generator, center, radius: float):
    """Stationary gas inside a ball: cube sample filtered to the sphere."""
    center = np.asarray(center, dtype=float)
    box = np.stack([center - radius, center + radius], axis=1)
    out = []
    for block, cov in sample_bath(params, rng, box):
        if np.linalg.norm(block[0::2] - center) < radius:
            out.append((block, cov))
    return out


def _system_mid(g: GaussianOperator):
    b = g.block_indices(SYSTEM_ID)
    xa, xb = g.x_alpha[b], g.x_beta[b]
    return 0.5 * (xa[0::2] + xb[0::2]), 0.5 * (xa[1::2] + xb[1::2])


def should_drop(g: GaussianOperator, particle_id, radius: float, m_env: float = 1.0,
                m_sys: float = 1.0) -> bool:
    """True when the particle sits outside ``radius`` of the system's mean position
    and moves away from it, in both branches."""
    if particle_id == SYSTEM_ID:
        return False
    idx = g.block_indices(particle_id)
    r_sys, p_sys = _system_mid(g)
    v_sys = p_sys / m_sys
    for x in (g.x_alpha, g.x_beta):
        rel = x[idx][0::2] - r_sys
        vel = x[idx][1::2] / m_env - v_sys
        if rel @ rel <= radius * radius or rel @ vel <= 0:
            return False
    return True


def drop_particle(g: GaussianOperator, particle_id) -> GaussianOperator:
    """Trace one particle out of ``g``.

    The complex centroid and the trace of the operator are continuous across the
    drop: the term ``(i/hbar) [Sigma S P (x_alpha - x_beta)]`` restricted to the
    retained rows goes to the ledger's centroid offset, and the dropped
    coordinates' share of eta is folded into ``log_amp``/``phase``.
    """
    if particle_id == SYSTEM_ID:
        raise ValueError("the system particle cannot be traced out")
    drop = g.block_indices(particle_id)
    keep = np.setdiff1d(np.arange(g.dim), drop)
    delta = g.x_alpha - g.x_beta
    p_delta = np.zeros_like(delta)
    p_delta[drop] = delta[drop]
    offset_add = (1j / HBAR) * (g.sigma @ apply_symplectic(p_delta))[keep]
    sig_keep = g.sigma[np.ix_(keep, keep)]
    d_eta = (eta_factor(g.x_alpha, g.x_beta, g.sigma)
             - eta_factor(g.x_alpha[keep], g.x_beta[keep], sig_keep))
    led = g.ledger
    offset = led.offset(g.dim)[keep] + offset_add
    ledger = replace(led, centroid_offset=offset, eta_offset=led.eta_offset + d_eta,
                     norm_log=led.norm_log + d_eta.real, n_drops=led.n_drops + 1)
    registry = tuple(p for p in g.registry if p != particle_id)
    return g.replace(x_alpha=g.x_alpha[keep], x_beta=g.x_beta[keep], sigma=sig_keep,
                     phase=g.phase + d_eta.imag, log_amp=g.log_amp + d_eta.real,
                     ledger=ledger, registry=registry)


def reduce_to_system(g: GaussianOperator) -> GaussianOperator:
    for pid in g.registry:
        if pid != SYSTEM_ID:
            g = drop_particle(g, pid)
    return g


def inject_particle(g: GaussianOperator, particle_id, block: np.ndarray,
                    cov: np.ndarray) -> GaussianOperator:
    """Append an uncorrelated particle, identical in both branches."""
    if particle_id in g.registry:
        raise ValueError(f"particle id {particle_id!r} already active")
    block = np.asarray(block, dtype=float)
    if block.shape != (g.block_size,) or cov.shape != (g.block_size, g.block_size):
        raise InvalidDimensionError("particle block does not match the registry block size")
    n, b = g.dim, block.size
    sigma = np.zeros((n + b, n + b), dtype=np.result_type(g.sigma.dtype, cov.dtype))
    sigma[:n, :n] = g.sigma
    sigma[n:, n:] = cov
    ledger = g.ledger
    if not ledger.is_empty:
        ledger = replace(ledger, centroid_offset=np.concatenate([ledger.offset(n), np.zeros(b)]))
    return g.replace(x_alpha=np.concatenate([g.x_alpha, block]),
                     x_beta=np.concatenate([g.x_beta, block]), sigma=sigma, ledger=ledger,
                     registry=g.registry + (particle_id,))


def _inward_velocity(params: BathParams, rng, normal: np.ndarray) -> np.ndarray:
    """Flux-weighted Maxwell-Boltzmann velocity crossing a surface along ``-normal``."""
    s = math.sqrt(params.thermal_speed_var)
    vn = s * math.sqrt(-2.0 * math.log(1.0 - rng.random()))
    t1 = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    a, b = rng.normal(0.0, s, size=2)
    return -vn * normal + a * t1 + b * t2


@dataclass
class Arrival:
    time: float
    position: np.ndarray  # relative to the vicinity centre for flux arrivals
    momentum: np.ndarray
    relative: bool = True


class FluxSource:
    """Poisson arrivals through the vicinity sphere (ideal-gas wall flux)."""

    def __init__(self, params: BathParams, rng: np.random.Generator, t0: float = 0.0):
        self.params = params
        self.rng = rng
        self.rate = params.injection_rate
        self.t = t0
        self.pending = self._draw()

    def _draw(self) -> Arrival | None:
        if self.rate <= 0:
            return None
        self.t += self.rng.exponential(1.0 / self.rate)
        normal = self.rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        v = _inward_velocity(self.params, self.rng, normal)
        return Arrival(self.t, self.params.vicinity_radius * normal, self.params.m_env * v)

    def next_time(self) -> float:
        return math.inf if self.pending is None else self.pending.time

    def pop(self) -> Arrival:
        a = self.pending
        self.pending = self._draw()
        return a


class RosterSource:
    """A fixed roster of ballistic particles; each is injected when it first
    enters the vicinity sphere around ``center``."""

    def __init__(self, params: BathParams, rng: np.random.Generator, t_max: float, center=(0, 0, 0)):
        self.params = params
        center = np.asarray(center, dtype=float)
        R = params.vicinity_radius
        n = params.roster_size
        vmax = 4.0 * math.sqrt(params.thermal_speed_var)
        half = (n / params.density) ** (1 / 3) / 2 if params.density > 0 else R
        half = max(half, R)
        pos = rng.uniform(-half, half, size=(n, 3)) + center
        vel = rng.normal(0.0, math.sqrt(params.thermal_speed_var), size=(n, 3))
        self.arrivals = []
        for i in range(n):
            t = self._entry_time(pos[i] - center, vel[i], R)
            if t is not None and t <= t_max:
                self.arrivals.append(Arrival(t, pos[i] + vel[i] * t, params.m_env * vel[i],
                                             relative=False))
        self.arrivals.sort(key=lambda a: a.time)
        self.initial = [a for a in self.arrivals if a.time == 0.0]
        self.arrivals = [a for a in self.arrivals if a.time > 0.0]
        self._i = 0
        self.reach = half + vmax * t_max

    @staticmethod
    def _entry_time(r, v, R):
        if r @ r < R * R:
            return 0.0
        a = v @ v
        b = 2 * (r @ v)
        c = r @ r - R * R
        disc = b * b - 4 * a * c
        if a == 0 or disc <= 0:
            return None
        t = (-b - math.sqrt(disc)) / (2 * a)
        return t if t > 0 else None

    def next_time(self) -> float:
        return self.arrivals[self._i].time if self._i < len(self.arrivals) else math.inf

    def pop(self) -> Arrival:
        a = self.arrivals[self._i]
        self._i += 1
        return a


def maybe_inject(g: GaussianOperator, arrival: Arrival, params: BathParams, particle_id):
    """Inject ``arrival`` if the vicinity has room.  Returns (operator, injected)."""
    if len(g.registry) - 1 >= params.max_active:
        return g, False
    pos = arrival.position
    if arrival.relative:
        r_sys, _ = _system_mid(g)
        pos = r_sys + pos
    cov = wavepacket_covariance(params.env_width, 3)
    return inject_particle(g, particle_id, particle_block(pos, arrival.momentum), cov), True
