"""Manufactured-solution verification: exact fields, sources, error norms.

The reference problem lives on the unit disk cut by an internal circle of
radius 0.3 around (0.3, 0).  The pressure is a compactly supported radial
polynomial scaled by 1/porosity, which makes it continuous across the
interface with the exact flux-jump conditions built in; the concentration
rides on the pressure with a trigonometric modulation in space and time.
Sources are derived from the fields: the divergence source in closed form,
the concentration source through high-order finite differences of the
analytic diffusive flux (never differencing across the interface, where
second derivatives jump).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .coefficients import dispersion_tensor, section7_model
from .errors import InvalidParameterError, UndefinedPointError
from .mesh import generate_disk_interface_mesh
from .quadrature import build_quadrature
from .scheme import Sources, TimeGrid, run
from .spaces import FluxSpace, build_spaces

_FD_STEP = 1e-5
_ON_INTERFACE_TOL = 1e-12
_NUDGE = 1e-10


# ---------------------------------------------------------------------------
# exact fields


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form fields of the interface convergence benchmark.

    All evaluators accept an (n, 2) point array (a single point works too)
    and return arrays of matching leading shape.  Points are attributed to
    subdomains by their true position relative to the interface circle.
    """

    model: object = field(default_factory=section7_model)
    center: tuple = (0.3, 0.0)
    radius: float = 0.3
    pressure_scale: float = 100.0
    conc_base: float = 0.5
    conc_scale: float = 50.0
    space_freq: float = 0.4
    time_freq: float = 4.0

    @property
    def support_radius(self):
        return 2.0 * self.radius

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        return x[None, :] if x.ndim == 1 else x

    def _s(self, x):
        d = x - np.asarray(self.center)
        return d[:, 0] ** 2 + d[:, 1] ** 2

    def label(self, x):
        """Subdomain label by true position: 1 inside the circle, else 0."""
        x = self._pts(x)
        return (self._s(x) < self.radius ** 2).astype(int)

    def _poly(self, s):
        """(P, P', P'') of P(s) = (s - rho^2)(R^2 - s)^4, zero for s >= R^2."""
        a = self.radius ** 2
        b = self.support_radius ** 2
        inside = s < b
        bs = np.where(inside, b - s, 0.0)
        p = (s - a) * bs ** 4
        dp = bs ** 3 * (b + 4.0 * a - 5.0 * s)
        d2p = bs ** 2 * (20.0 * s - 8.0 * b - 12.0 * a)
        return p * inside, dp * inside, d2p * inside

    def _phi_k(self, labels):
        return self.model.phi(labels), self.model.k(labels)

    def p(self, x, t=0.0):
        x = self._pts(x)
        s = self._s(x)
        phi, _ = self._phi_k(self.label(x))
        return self.pressure_scale * self._poly(s)[0] / phi

    def p_sided(self, x, side):
        """Pressure evaluated with the coefficient branch of one subdomain."""
        x = self._pts(x)
        phi = self.model.phi(side)
        return self.pressure_scale * self._poly(self._s(x))[0] / phi

    def grad_p(self, x, t=0.0):
        x = self._pts(x)
        s = self._s(x)
        phi, _ = self._phi_k(self.label(x))
        dp = self._poly(s)[1]
        return (self.pressure_scale * dp / phi)[:, None] * (
            2.0 * (x - np.asarray(self.center)))

    def lap_p(self, x):
        x = self._pts(x)
        s = self._s(x)
        phi, _ = self._phi_k(self.label(x))
        _, dp, d2p = self._poly(s)
        return self.pressure_scale * (4.0 * s * d2p + 4.0 * dp) / phi

    def _trig(self, x):
        w = self.space_freq
        t1 = np.cos(w * x[:, 0])
        t2 = np.sin(w * x[:, 1])
        grad = np.stack([-w * np.sin(w * x[:, 0]) * t2,
                         w * t1 * np.cos(w * x[:, 1])], axis=-1)
        return t1 * t2, grad

    def c(self, x, t):
        x = self._pts(x)
        trig, _ = self._trig(x)
        return (self.conc_base
                + self.conc_scale * self.p(x) * trig * math.sin(self.time_freq * t))

    def c_sided(self, x, t, side):
        x = self._pts(x)
        trig, _ = self._trig(x)
        return (self.conc_base + self.conc_scale * self.p_sided(x, side)
                * trig * math.sin(self.time_freq * t))

    def dc_dt(self, x, t):
        x = self._pts(x)
        trig, _ = self._trig(x)
        return (self.conc_scale * self.time_freq * self.p(x) * trig
                * math.cos(self.time_freq * t))

    def grad_c(self, x, t):
        x = self._pts(x)
        trig, dtrig = self._trig(x)
        return self.conc_scale * math.sin(self.time_freq * t) * (
            trig[:, None] * self.grad_p(x) + self.p(x)[:, None] * dtrig)

    def u(self, x, t):
        x = self._pts(x)
        _, k = self._phi_k(self.label(x))
        mu = np.asarray(self.model.viscosity.value(self.c(x, t)))
        return -(k / mu)[:, None] * self.grad_p(x)

    def w(self, x, t):
        x = self._pts(x)
        tensor = dispersion_tensor(self.model, self.u(x, t), self.label(x))
        return -np.einsum("nij,nj->ni", tensor, self.grad_c(x, t))

    def g(self, x, t):
        """Divergence source div u, in closed form."""
        x = self._pts(x)
        _, k = self._phi_k(self.label(x))
        cc = self.c(x, t)
        mu = np.asarray(self.model.viscosity.value(cc))
        dmu = np.asarray(self.model.viscosity.derivative(cc))
        dot = np.einsum("ni,ni->n", self.grad_c(x, t), self.grad_p(x))
        return k * dmu / mu ** 2 * dot - k * self.lap_p(x) / mu

    def div_w(self, x, t):
        """div w by 4th-order finite differences of the analytic flux.

        Stencils are subdomain-aware: points closer than two steps to the
        interface circle use one-sided stencils directed away from it, so
        no difference ever straddles the coefficient jump.
        """
        x = self._pts(x)
        h = _FD_STEP
        c0 = np.asarray(self.center)
        rad = np.hypot(*(x - c0).T)
        signed = rad - self.radius
        central = np.abs(signed) > 2.0 * h
        out = np.zeros(len(x))
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = 1.0
            if np.any(central):
                xc = x[central]
                acc = np.zeros(len(xc))
                for off, coef in ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)):
                    acc += coef * self.w(xc + off * h * e, t)[:, axis]
                out[central] += acc / (12.0 * h)
            onesided = ~central
            if np.any(onesided):
                xo = x[onesided]
                radial = (xo - c0)[:, axis]
                away = np.where(radial == 0.0, 1.0, np.sign(radial))
                away *= np.where(signed[onesided] >= 0.0, 1.0, -1.0)
                acc = np.zeros(len(xo))
                for off, coef in ((0, -25.0), (1, 48.0), (2, -36.0),
                                  (3, 16.0), (4, -3.0)):
                    shift = (off * h * away)[:, None] * e
                    acc += coef * self.w(xo + shift, t)[:, axis]
                out[onesided] += away * acc / (12.0 * h)
        return out

    def f(self, x, t):
        """Concentration source Phi dc/dt - div(D grad c) + u . grad c."""
        x = self._pts(x)
        phi, _ = self._phi_k(self.label(x))
        adv = np.einsum("ni,ni->n", self.u(x, t), self.grad_c(x, t))
        return phi * self.dc_dt(x, t) + self.div_w(x, t) + adv

    def _nudge(self, x):
        """Pull points sitting on the interface slightly inward."""
        x = self._pts(x).copy()
        c0 = np.asarray(self.center)
        d = x - c0
        rad = np.hypot(d[:, 0], d[:, 1])
        on = np.abs(rad - self.radius) < _ON_INTERFACE_TOL
        if np.any(on):
            scale = (rad[on] - _NUDGE) / rad[on]
            x[on] = c0 + d[on] * scale[:, None]
        return x

    def f_nudged(self, x, t):
        return self.f(self._nudge(x), t)

    def g_nudged(self, x, t):
        return self.g(self._nudge(x), t)

    def source_terms(self, x, t):
        """(f, g) at strictly off-interface points.

        Raises UndefinedPointError when any point lies on the interface
        circle, where the second derivatives of the fields jump.
        """
        x = self._pts(x)
        rad = np.hypot(*(x - np.asarray(self.center)).T)
        if np.any(np.abs(rad - self.radius) < _ON_INTERFACE_TOL):
            raise UndefinedPointError(
                "source terms are undefined on the interface circle")
        return self.f(x, t), self.g(x, t)

    def initial_concentration(self, x):
        return self.c(x, 0.0)

    def dispersion_at(self, t):
        """Point -> 2x2 dispersion tensor of the exact velocity at time t."""
        def tensor(x):
            x = self._pts(x)
            return dispersion_tensor(self.model, self.u(x, t), self.label(x))
        return tensor


def manufactured_sources(exact):
    """Scheme sources for a manufactured run (interface-safe evaluation)."""
    return Sources(mode="manufactured", f=exact.f_nudged, g=exact.g_nudged)


# ---------------------------------------------------------------------------
# norms


def l2_error(field, exact, t=None, quad_order=None):
    """L2 distance between a discrete field and an exact evaluator.

    ``exact`` is called as exact(points, t) when t is given, else
    exact(points); it must be vectorized over an (n, 2) point array.
    """
    space = field.space
    order = quad_order or 2 * space.r + 4
    quad = build_quadrature(order)
    phys = space.geom.map_points(quad.points)
    flat = phys.reshape(-1, 2)
    ex = exact(flat, t) if t is not None else exact(flat)
    vals = field.eval(quad.points)
    if isinstance(space, FluxSpace):
        diff = vals - np.asarray(ex).reshape(phys.shape)
        sq = (diff ** 2).sum(axis=-1)
    else:
        diff = vals - np.asarray(ex).reshape(phys.shape[:2])
        sq = diff ** 2
    total = np.einsum("kq,q,k->", sq, quad.weights, space.geom.detB)
    return float(np.sqrt(total))


def time_integrated_flux_error(step_errors, tau):
    """Discrete-in-time L2 norm (sum_n tau e_n^2)^(1/2) over levels 1..N."""
    if step_errors is None or len(step_errors) == 0:
        raise InvalidParameterError("no flux-error snapshots recorded")
    arr = np.asarray(step_errors, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("missing or non-finite flux-error snapshot")
    return float(np.sqrt(tau * np.sum(arr ** 2)))


def convergence_rate(coarse_err, fine_err):
    """ln(e_h / e_{h/2}) / ln 2, the rate formula of the benchmark tables."""
    return math.log(coarse_err / fine_err) / math.log(2.0)


def fitted_slope(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# true-geometry integration (for compatibility checks on curved subdomains)


def integrate_true_geometry(fn, center=(0.3, 0.0), radius=0.3,
                            n_angular=256, n_radial=24):
    """Integrate fn over the unit disk, splitting radially at the interface
    circle and at the support circle so each radial segment is smooth.

    The angular direction uses the trapezoid rule (spectrally accurate for
    periodic smooth integrands); radial segments use Gauss-Legendre.
    """
    c0 = np.asarray(center, dtype=float)
    phi = 2.0 * np.pi * np.arange(n_angular) / n_angular
    e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    proj = e @ c0
    rmax = -proj + np.sqrt(proj ** 2 + 1.0 - c0 @ c0)
    xg, wg = roots_legendre(n_radial)

    total = 0.0
    cuts = [np.zeros_like(rmax),
            np.full_like(rmax, radius),
            np.minimum(2.0 * radius, rmax),
            rmax]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        r = mid[:, None] + half[:, None] * xg[None, :]        # (na, nr)
        wt = half[:, None] * wg[None, :] * r
        pts = c0 + r[..., None] * e[:, None, :]
        vals = np.asarray(fn(pts.reshape(-1, 2))).reshape(r.shape)
        total += float((vals * wt).sum())
    return total * (2.0 * np.pi / n_angular)


def sample_subdomain(n, label, center=(0.3, 0.0), radius=0.3, rng=None,
                     margin=1e-3):
    """Uniform random points in one subdomain, a safe margin off the curves."""
    rng = rng or np.random.default_rng(0)
    c0 = np.asarray(center, dtype=float)
    out = []
    while len(out) < n:
        cand = rng.uniform(-1.0, 1.0, size=(4 * n, 2))
        r = np.hypot(cand[:, 0], cand[:, 1])
        d = np.hypot(*(cand - c0).T)
        if label == 1:
            keep = d < radius - margin
        else:
            keep = (r < 1.0 - margin) & (d > radius + margin)
        out.extend(cand[keep])
    return np.asarray(out[:n])


# ---------------------------------------------------------------------------
# convergence studies


@dataclass
class ReportRow:
    tau: float
    h: float                  # nominal mesh size 1/M
    M: int
    err_U: float
    err_C: float
    err_P: float
    err_W_timeint: float
    max_divergence_residual: float = 0.0
    max_pressure_mean_residual: float = 0.0


@dataclass
class ConvergenceReport:
    """Error table over a family of (tau, M) runs plus fitted rates.

    ``rate_U``/``rate_C`` follow the table convention: the log2 error
    ratio of the finest two rows.
    """

    rows: list
    mode: str = "coupled"
    rate_U: float = None
    rate_C: float = None

    def pair_rates(self, attr="err_C"):
        vals = [getattr(r, attr) for r in self.rows]
        return [convergence_rate(a, b) for a, b in zip(vals[:-1], vals[1:])]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("tau,h,err_U,err_C,err_P,err_W_timeint\n")
            for r in self.rows:
                fh.write(f"{r.tau:.6E},{r.h:.6E},{r.err_U:.4E},"
                         f"{r.err_C:.4E},{r.err_P:.4E},{r.err_W_timeint:.4E}\n")

    def to_text(self):
        lines = []
        head = (f"{'tau':>10} {'h':>10} {'||U-u||_L2':>14} {'||C-c||_L2':>14}")
        lines.append(head)
        lines.append("-" * len(head))
        for r in self.rows:
            lines.append(f"{_frac(r.tau):>10} {_frac(r.h):>10} "
                         f"{r.err_U:>14.3E} {r.err_C:>14.3E}")
        if self.rate_U is not None:
            lines.append("-" * len(head))
            lines.append(f"{'convergence rate':>21} {self.rate_U:>14.2f} "
                         f"{self.rate_C:>14.2f}")
        return "\n".join(lines)


def _frac(x):
    """Render 0.125 as 1/8 where exact, for table readability."""
    if x <= 0:
        return f"{x:g}"
    inv = 1.0 / x
    if abs(inv - round(inv)) < 1e-9:
        return f"1/{int(round(inv))}"
    return f"{x:g}"


def run_benchmark_case(tau, M, exact=None, degree=1, T=1.0, seed=0,
                       quad_order=None, solver_tol=1e-10):
    """One full manufactured run; returns a ReportRow with final-time errors."""
    exact = exact or ExactSolution()
    mesh = generate_disk_interface_mesh(M, exact.center, exact.radius, seed=seed)
    spaces = build_spaces(mesh, degree)
    sources = manufactured_sources(exact)
    N = int(round(T / tau))
    grid = TimeGrid(T, N)

    w_errors = []

    def on_step(state):
        if state.n >= 1:
            w_errors.append(l2_error(state.W, exact.w, state.t))

    result = run(spaces, model=exact.model, grid=grid, sources=sources,
                 c0=exact.initial_concentration, on_step=on_step,
                 quad_order=quad_order, tol=solver_tol)
    final = result.final
    return ReportRow(
        tau=grid.tau, h=1.0 / M, M=M,
        err_U=l2_error(final.U, exact.u, T),
        err_C=l2_error(final.C, exact.c, T),
        err_P=l2_error(final.P, exact.p, T),
        err_W_timeint=time_integrated_flux_error(w_errors, grid.tau),
        max_divergence_residual=result.max_divergence_residual,
        max_pressure_mean_residual=result.max_pressure_mean_residual,
    )


def _default_case(args):
    tau, M, degree, T, seed = args
    return run_benchmark_case(tau, M, degree=degree, T=T, seed=seed)


def convergence_study(pairs, mode="coupled", exact=None, degree=1, T=1.0,
                      seed=0, threads=1):
    """Run a family of (tau, M) cases and tabulate errors and rates.

    With threads > 1 and default problem data, rows run in parallel worker
    processes (each row is an independent solve).
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InvalidParameterError(
            "need at least two (tau, M) rows to compute a rate")
    if threads > 1 and exact is None:
        from concurrent.futures import ProcessPoolExecutor

        args = [(tau, M, degree, T, seed) for tau, M in pairs]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_default_case, args))
    else:
        rows = []
        for tau, M in pairs:
            try:
                rows.append(run_benchmark_case(tau, M, exact=exact,
                                               degree=degree, T=T, seed=seed))
            except Exception as exc:
                raise type(exc)(
                    f"convergence row (tau={tau}, M={M}) failed: {exc}"
                ) from exc
    report = ConvergenceReport(rows, mode=mode)
    if mode == "coupled":
        report.rate_U = convergence_rate(rows[-2].err_U, rows[-1].err_U)
        report.rate_C = convergence_rate(rows[-2].err_C, rows[-1].err_C)
    return report


TABLE1_PAIRS = [(1.0 / 8.0, 32), (1.0 / 32.0, 64), (1.0 / 128.0, 128)]
TABLE2_TAUS = (0.2, 0.1, 0.05)
TABLE2_MS = (32, 64, 96, 128)


def table1_study(threads=1, seed=0):
    """The coupled-refinement preset: tau in {1/8,1/32,1/128}, M in {32,64,128}."""
    return convergence_study(TABLE1_PAIRS, mode="coupled", threads=threads,
                             seed=seed)


def table2_study(threads=1, seed=0):
    """The fixed-tau presets: one report per tau in {0.2, 0.1, 0.05}."""
    reports = {}
    for tau in TABLE2_TAUS:
        pairs = [(tau, M) for M in TABLE2_MS]
        reports[tau] = convergence_study(pairs, mode="fixed-tau",
                                         threads=threads, seed=seed)
    return reports


# ---------------------------------------------------------------------------
# projection order study


@dataclass
class ProjectionRow:
    M: int
    h: float
    err_l2proj: float
    err_fortin: float
    err_ritz_scalar: float
    err_ritz_flux: float


@dataclass
class ProjectionReport:
    rows: list
    slopes: dict

    def to_text(self):
        head = (f"{'M':>5} {'h':>8} {'L2 proj c':>12} {'Fortin u':>12} "
                f"{'Ritz c':>12} {'Ritz w':>12}")
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.M:>5} {_frac(r.h):>8} {r.err_l2proj:>12.3E} "
                         f"{r.err_fortin:>12.3E} {r.err_ritz_scalar:>12.3E} "
                         f"{r.err_ritz_flux:>12.3E}")
        lines.append("-" * len(head))
        lines.append("slopes: " + ", ".join(
            f"{k}={v:.2f}" for k, v in self.slopes.items()))
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("M,h,err_l2proj,err_fortin,err_ritz_scalar,err_ritz_flux\n")
            for r in self.rows:
                fh.write(f"{r.M},{r.h:.6E},{r.err_l2proj:.4E},"
                         f"{r.err_fortin:.4E},{r.err_ritz_scalar:.4E},"
                         f"{r.err_ritz_flux:.4E}\n")


def projection_order_study(Ms=(16, 32, 64), t=0.5, degree=1, exact=None,
                           seed=0):
    """Measure L2/Fortin/mixed-Ritz projection errors on the exact fields."""
    from .spaces import fortin_project, l2_project, mixed_ritz_project

    exact = exact or ExactSolution()
    rows = []
    for M in Ms:
        mesh = generate_disk_interface_mesh(M, exact.center, exact.radius,
                                            seed=seed)
        spaces = build_spaces(mesh, degree)
        scalar, flux = spaces

        c_at = lambda x: exact.c(x, t)
        u_at = lambda x: exact.u(x, t)
        w_at = lambda x: exact.w(x, t)
        divw_at = lambda x: exact.div_w(exact._nudge(x), t)

        proj_c = l2_project(c_at, scalar)
        qh_u = fortin_project(u_at, flux)
        ritz_c, ritz_w = mixed_ritz_project(
            c_at, w_at, divw_at, exact.dispersion_at(t), spaces)

        rows.append(ProjectionRow(
            M=M, h=1.0 / M,
            err_l2proj=l2_error(proj_c, exact.c, t),
            err_fortin=l2_error(qh_u, exact.u, t),
            err_ritz_scalar=l2_error(ritz_c, exact.c, t),
            err_ritz_flux=l2_error(ritz_w, exact.w, t),
        ))
    hs = [r.h for r in rows]
    slopes = {
        "l2proj": fitted_slope(hs, [r.err_l2proj for r in rows]),
        "fortin": fitted_slope(hs, [r.err_fortin for r in rows]),
        "ritz_scalar": fitted_slope(hs, [r.err_ritz_scalar for r in rows]),
        "ritz_flux": fitted_slope(hs, [r.err_ritz_flux for r in rows]),
    }
    return ProjectionReport(rows, slopes)
