"""Decoupled, linearized time stepping for the coupled flow/transport system.

Each transition n -> n+1 performs two linear solves: first the
concentration/diffusive-flux system, whose dispersion tensor and
convective coupling are frozen at the previous velocity, then the
pressure/velocity system with the fresh concentration in the viscosity.
Initialization interpolates the initial concentration and performs the
level-0 pressure solve; the diffusive flux first appears at level 1.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_concentration_system,
    assemble_pressure_system,
)
from .errors import InvalidParameterError, SolverError
from .spaces import FieldCoefficients, lagrange_interpolate, zero_field

DEFAULT_SOLVER_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise InvalidParameterError(f"step count N must be >= 1, got {self.N}")
        if self.T <= 0:
            raise InvalidParameterError(f"final time T must be positive, got {self.T}")

    @property
    def tau(self):
        return self.T / self.N

    def time(self, n):
        return self.T * n / self.N


@dataclass(frozen=True)
class Sources:
    """Problem data in one of two modes.

    Manufactured mode carries a free concentration source f(x, t) and a
    divergence source g(x, t).  Well mode carries injection/production
    rates and the injected concentration; the divergence source is then
    q_I - q_P and the concentration equation gains the reaction term.
    All callables take an (n, 2) point array and a time.
    """

    mode: str
    f: callable = None
    g: callable = None
    q_injection: callable = None
    q_production: callable = None
    injected_concentration: callable = None

    def __post_init__(self):
        if self.mode == "manufactured":
            if self.f is None or self.g is None:
                raise InvalidParameterError("manufactured mode needs f and g")
        elif self.mode == "wells":
            if None in (self.q_injection, self.q_production,
                        self.injected_concentration):
                raise InvalidParameterError(
                    "well mode needs q_injection, q_production and "
                    "injected_concentration")
        else:
            raise InvalidParameterError(f"unknown source mode {self.mode!r}")

    def pressure_source(self, t):
        if self.mode == "manufactured":
            return lambda x: self.g(x, t)
        return lambda x: self.q_injection(x, t) - self.q_production(x, t)

    def concentration_kwargs(self, t):
        if self.mode == "manufactured":
            return {"source": lambda x: self.f(x, t)}
        return {
            "injection": lambda x: self.q_injection(x, t),
            "injected_concentration":
                lambda x: self.injected_concentration(x, t),
        }


@dataclass
class DiscreteState:
    """All discrete unknowns at one time level."""

    n: int
    t: float
    P: FieldCoefficients
    U: FieldCoefficients
    C: FieldCoefficients
    W: FieldCoefficients


def solve_saddle(system, tol=DEFAULT_SOLVER_TOL):
    """Direct sparse solve of a saddle system with a residual check.

    Returns (flux, scalar, multiplier).  Raises SolverError on a singular
    factorization, non-finite solution, or relative residual above tol.
    """
    mat = system.matrix().tocsc()
    rhs = system.rhs()
    try:
        lu = spla.splu(mat)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("solver produced non-finite values "
                          "(singular or severely ill-conditioned system)")
    rhs_norm = np.linalg.norm(rhs)
    residual = np.linalg.norm(mat @ x - rhs)
    rel = residual / rhs_norm if rhs_norm > 0 else residual
    if rel > tol:
        raise SolverError(
            f"solver residual {rel:.3e} above tolerance {tol:.1e}")
    return system.split(x)


@dataclass
class StepDiagnostics:
    """Scheme invariants monitored at a single level."""

    divergence_residual: float
    pressure_mean_residual: float


def pressure_update(spaces, model, concentration, sources, t,
                    quad_order=None, tol=DEFAULT_SOLVER_TOL):
    """Solve the pressure/velocity system at time t given a concentration."""
    system = assemble_pressure_system(
        spaces, model, concentration, sources.pressure_source(t),
        quad_order=quad_order,
        check_compatibility=(sources.mode == "wells"))
    uvec, pvec, _ = solve_saddle(system, tol)

    # Divergence identity against the zero-mean test space: the raw
    # residual of the divergence row is purely in the direction of the
    # mean vector (absorbed by the multiplier), which constant-free test
    # functions cannot see.
    raw = system.B @ uvec - system.rhs_scalar
    m = system.mean_vector
    raw = raw - m * (m @ raw) / (m @ m)
    div_residual = float(np.max(np.abs(raw)))
    pnorm = np.linalg.norm(pvec)
    mean_residual = float(abs(m @ pvec)) / (pnorm if pnorm > 0 else 1.0)

    scalar, flux = spaces
    return (FieldCoefficients(scalar, pvec), FieldCoefficients(flux, uvec),
            StepDiagnostics(div_residual, mean_residual))


def concentration_update(spaces, model, velocity, prev_concentration, tau,
                         sources, t_next, quad_order=None,
                         tol=DEFAULT_SOLVER_TOL):
    """Solve the concentration/diffusive-flux system for the next level."""
    system = assemble_concentration_system(
        spaces, model, velocity, prev_concentration, tau,
        quad_order=quad_order, **sources.concentration_kwargs(t_next))
    wvec, cvec, _ = solve_saddle(system, tol)
    scalar, flux = spaces
    return FieldCoefficients(scalar, cvec), FieldCoefficients(flux, wvec)


def initialize(spaces, model, sources, c0, quad_order=None,
               tol=DEFAULT_SOLVER_TOL):
    """State at level 0: interpolated concentration plus a pressure solve."""
    scalar, flux = spaces
    conc = lagrange_interpolate(c0, scalar)
    pres, vel, diag = pressure_update(spaces, model, conc, sources, 0.0,
                                      quad_order, tol)
    state = DiscreteState(0, 0.0, pres, vel, conc, zero_field(flux))
    return state, diag


def step(state, tau, spaces, model, sources, quad_order=None,
         tol=DEFAULT_SOLVER_TOL):
    """Advance one level: concentration solve, then pressure solve."""
    t_next = state.t + tau
    conc, wflux = concentration_update(
        spaces, model, state.U, state.C, tau, sources, t_next, quad_order, tol)
    pres, vel, diag = pressure_update(
        spaces, model, conc, sources, t_next, quad_order, tol)
    new_state = DiscreteState(state.n + 1, t_next, pres, vel, conc, wflux)
    return new_state, diag


@dataclass
class RunResult:
    """Final state plus monitored invariants and optional snapshots."""

    final: DiscreteState
    max_divergence_residual: float
    max_pressure_mean_residual: float
    snapshots: list = field(default_factory=list)


def run(spaces, model, grid, sources, c0, snapshot_every=0, on_step=None,
        quad_order=None, tol=DEFAULT_SOLVER_TOL):
    """March the scheme over a full time grid.

    ``on_step(state)`` is invoked after initialization and after every
    step (use it to accumulate error series).  When ``snapshot_every`` is
    positive, every k-th state (and the final one) is retained.
    """
    state, diag = initialize(spaces, model, sources, c0, quad_order, tol)
    max_div = diag.divergence_residual
    max_mean = diag.pressure_mean_residual
    snapshots = []
    if snapshot_every:
        snapshots.append(state)
    if on_step is not None:
        on_step(state)
    tau = grid.tau
    for n in range(grid.N):
        state, diag = step(state, tau, spaces, model, sources, quad_order, tol)
        max_div = max(max_div, diag.divergence_residual)
        max_mean = max(max_mean, diag.pressure_mean_residual)
        if on_step is not None:
            on_step(state)
        if snapshot_every and (state.n % snapshot_every == 0
                               or state.n == grid.N):
            snapshots.append(state)
    return RunResult(state, max_div, max_mean, snapshots)
