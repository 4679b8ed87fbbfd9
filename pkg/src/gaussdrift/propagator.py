"""Equations of motion and adaptive integration for a single Gaussian operator.

Flat state layout for phase-space dimension D (``T = D(D+1)/2``)::

    [x_alpha (D) | x_beta (D) | Re Sigma_ut (T) | Im Sigma_ut (T) | phase | log_amp
     | Re offset (D) | Im offset (D)]

The trailing offset block is present only once the ledger holds a trace.
Storing only the upper triangle keeps Sigma exactly symmetric after every step.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .hamiltonians import ExperimentHamiltonian, HamiltonianModel
from .phasespace import HBAR, GaussianOperator, apply_symplectic, symplectic_form


class StiffnessError(RuntimeError):
    """Step size fell below the floor; the problem is stiff or the solution blew up."""


def pack(xa, xb, sigma, phase, log_amp, offset=None) -> np.ndarray:
    dim = xa.shape[0]
    iu, ju = np.triu_indices(dim)
    s = sigma[iu, ju]
    parts = [xa, xb, s.real, s.imag, [phase, log_amp]]
    if offset is not None:
        parts += [offset.real, offset.imag]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack(y: np.ndarray, dim: int):
    """Inverse of :func:`pack`: (xa, xb, sigma, phase, log_amp, offset or None)."""
    nt = dim * (dim + 1) // 2
    iu, ju = np.triu_indices(dim)
    xa = y[:dim].copy()
    xb = y[dim:2 * dim].copy()
    s = y[2 * dim:2 * dim + nt] + 1j * y[2 * dim + nt:2 * dim + 2 * nt]
    sigma = np.empty((dim, dim), dtype=complex)
    sigma[iu, ju] = s
    sigma[ju, iu] = s
    base = 2 * dim + 2 * nt
    phase, log_amp = float(y[base]), float(y[base + 1])
    offset = None
    if y.size > base + 2:
        offset = y[base + 2:base + 2 + dim] + 1j * y[base + 2 + dim:base + 2 + 2 * dim]
    return xa, xb, sigma, phase, log_amp, offset


@dataclass
class DynamicalState:
    """Flattened evolving members of a GaussianOperator plus the time.

    ``template`` carries what does not evolve (registry, weight, ledger records).
    """

    y: np.ndarray
    time: float
    template: GaussianOperator

    @classmethod
    def from_operator(cls, g: GaussianOperator, time: float = 0.0) -> DynamicalState:
        offset = None if g.ledger.is_empty else g.ledger.offset(g.dim)
        sigma = np.asarray(g.sigma, dtype=complex)
        return cls(pack(g.x_alpha, g.x_beta, sigma, g.phase, g.log_amp, offset), float(time), g)

    @property
    def dim(self) -> int:
        return self.template.dim

    @property
    def has_ledger(self) -> bool:
        return not self.template.ledger.is_empty

    def to_operator(self) -> GaussianOperator:
        xa, xb, sigma, phase, log_amp, offset = unpack(self.y, self.dim)
        ledger = self.template.ledger
        if offset is not None:
            ledger = replace(ledger, centroid_offset=offset)
        return self.template.replace(x_alpha=xa, x_beta=xb, sigma=sigma, phase=phase,
                                     log_amp=log_amp, ledger=ledger)


def _branch(model: HamiltonianModel, x):
    return model.gradient(x), model.hessian(x), model.lagrangian(x)


def offdiagonal_derivative(xa, xb, sigma, branch_a, branch_b, offset=None, hbar=HBAR):
    """Time derivatives for one operator given local data (gradient, half-Hessian,
    Lagrangian) at each branch centre.  Returns a flat vector in :func:`pack` layout."""
    ga, ha, la = branch_a
    gb, hb, lb = branch_b
    S = symplectic_form(xa.size // 2)
    hp = 0.5 * (ha + hb)
    hm = ha - hb
    A = S @ hp @ sigma
    dsig = 2.0 * (A + A.T) - (2j / hbar) * (sigma @ hm @ sigma) - (0.5j * hbar) * (S @ hm @ S)
    dphi = (la - lb - np.trace(sigma @ hm)) / hbar
    phase_rate, amp_rate = dphi.real, -dphi.imag
    doffset = None
    if offset is not None:
        cf = 0.5 * (xa + xb) + (1j / hbar) * (sigma @ apply_symplectic(xa - xb))
        grad_diff = ga - gb + 2.0 * ha @ (cf - xa) - 2.0 * hb @ (cf - xb)
        de = -(1j / hbar) * (grad_diff @ offset + offset @ hm @ offset)
        phase_rate += de.imag
        amp_rate += de.real
        doffset = 2.0 * S @ hp @ offset - (2j / hbar) * sigma @ (hm @ offset)
    return pack(S @ ga, S @ gb, dsig, phase_rate, amp_rate, doffset)


def rhs_offdiagonal(model: HamiltonianModel, state: DynamicalState) -> np.ndarray:
    xa, xb, sigma, _, _, offset = unpack(state.y, state.dim)
    return offdiagonal_derivative(xa, xb, sigma, _branch(model, xa), _branch(model, xb), offset)


def rhs_diagonal(model: HamiltonianModel, state: DynamicalState) -> np.ndarray:
    """Closed-system flow of a diagonal component: Newton for the centre,
    ``dSigma/dt = 2 (S H Sigma - Sigma H S)`` for the covariance, constant phase."""
    xa, xb, sigma, _, _, offset = unpack(state.y, state.dim)
    if not np.array_equal(xa, xb):
        raise ValueError("rhs_diagonal requires x_alpha == x_beta")
    g, h, _ = _branch(model, xa)
    S = symplectic_form(xa.size // 2)
    A = S @ (0.5 * (h + h)) @ sigma
    dsig = 2.0 * (A + A.T)
    dx = S @ g
    doffset = None
    if offset is not None:
        doffset = 2.0 * S @ h @ offset
    return pack(dx, dx, dsig, 0.0, 0.0, doffset)


def _use_kernel(model) -> bool:
    return _kernels.NUMBA_ENABLED and type(model) is ExperimentHamiltonian


def integrate(model: HamiltonianModel, state: DynamicalState, t_target: float, tol: float = 1e-9,
              atol: float | None = None, max_step: float = np.inf, first_step: float = 0.1,
              use_kernel: bool | None = None) -> tuple[DynamicalState, float]:
    """Advance ``state`` to ``t_target`` with Dormand-Prince 5(4).

    Returns the new state and the last step size, which callers pass back as
    ``first_step`` when continuing after an event.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t_target < state.time:
        raise ValueError(f"t_target {t_target} is before state time {state.time}")
    if t_target == state.time:
        return state, first_step
    atol = tol if atol is None else atol
    if use_kernel is None:
        use_kernel = _use_kernel(model)
    if use_kernel:
        y, h, steps, status = _kernels.dopri_experiment(
            state.y, state.time, t_target, tol, atol, max_step, first_step, state.dim,
            state.has_ledger, model.epsilon, model.width, model.m_env, HBAR)
    else:
        work = DynamicalState(state.y, state.time, state.template)

        def f(y):
            work.y = y
            return rhs_offdiagonal(model, work)

        y, h, steps, status = _kernels.dopri_numpy(f, state.y, state.time, t_target, tol, atol,
                                                   max_step, first_step)
    if status != _kernels.STATUS_OK:
        kind = "step underflow" if status == _kernels.STATUS_UNDERFLOW else "non-finite state"
        raise StiffnessError(f"{kind} at dim={state.dim}, t0={state.time}, t_target={t_target}, "
                             f"h={h:.3e}, accepted_steps={steps}")
    return DynamicalState(np.asarray(y), float(t_target), state.template), float(h)
