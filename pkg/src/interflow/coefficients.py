"""Physical coefficient fields: porosity, permeability, viscosity, dispersion.

All evaluations are pure functions of their arguments and are safe to call
concurrently.  The dispersion tensor follows the standard velocity-dependent
form

    D(u, x) = phi(x) * [ d0 I + F(Pe) |u| (a1 I + (a2 - a1) u u^T / |u|^2) ],

with F(Pe) = Pe / (Pe + dr) and Pe = dp |u|.  Its eigenvalues are bounded
below by phi_min * d0 and above by phi_max * (d0 + |u| max(a1, a2)).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

# Below this speed the mechanical-dispersion term (which is O(|u|)) is
# replaced by its continuous limit, zero.
_U_FLOOR = 1e-14


@dataclass(frozen=True)
class ViscosityLaw:
    """A total viscosity law s -> mu(s) with derivative and declared bound.

    ``bound`` is the constant mu0 with 1/mu0 <= mu <= mu0 and |mu'| <= mu0
    on the validation range of the model.
    """

    name: str
    value: callable = field(repr=False)
    derivative: callable = field(repr=False)
    bound: float = 1.0e6

    def __call__(self, s):
        return self.value(s)


def logistic_viscosity():
    """The shipped default law mu(c) = 1 / (1 + exp(5 c))."""
    def mu(s):
        return 1.0 / (1.0 + np.exp(5.0 * np.asarray(s, dtype=float)))

    def dmu(s):
        e = np.exp(5.0 * np.asarray(s, dtype=float))
        return -5.0 * e / (1.0 + e) ** 2

    # covers c in [-2, 2]: mu(2) = 1/(1 + e^10) ~ 4.5e-5
    return ViscosityLaw("logistic", mu, dmu, bound=2.5e4)


def constant_viscosity(value=1.0):
    def mu(s):
        return np.full_like(np.asarray(s, dtype=float), value)

    def dmu(s):
        return np.zeros_like(np.asarray(s, dtype=float))

    return ViscosityLaw("constant", mu, dmu, bound=max(value, 1.0 / value))


VISCOSITY_LAWS = {
    "logistic": logistic_viscosity,
    "constant": constant_viscosity,
}


@dataclass(frozen=True)
class MediumModel:
    """Piecewise-constant medium data plus dispersion parameters.

    ``porosity``/``permeability`` are indexed by subdomain label.  All
    dispersion parameters must be positive.  ``source_bound`` is the
    declared L-infinity bound q0 on injection/production sources.
    """

    porosity: tuple
    permeability: tuple
    viscosity: ViscosityLaw
    d0: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    dr: float = 1.0
    dp: float = 1.0
    source_bound: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "porosity", tuple(float(v) for v in self.porosity))
        object.__setattr__(self, "permeability",
                           tuple(float(v) for v in self.permeability))
        if len(self.porosity) != len(self.permeability):
            raise InvalidParameterError(
                "porosity and permeability must cover the same labels")
        for name in ("d0", "alpha1", "alpha2", "dr", "dp", "source_bound"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive")
        if any(v <= 0 for v in self.porosity + self.permeability):
            raise InvalidParameterError("porosity and permeability must be positive")

    @property
    def num_labels(self):
        return len(self.porosity)

    def phi(self, label):
        """Porosity per subdomain label (scalar or array of labels)."""
        return np.asarray(self.porosity, dtype=float)[label]

    def k(self, label):
        return np.asarray(self.permeability, dtype=float)[label]

    def dispersion_bounds(self):
        """(d1, d2, d3) with d1 |xi|^2 <= D xi.xi <= (d2 + d3 |u|) |xi|^2."""
        phi_min, phi_max = min(self.porosity), max(self.porosity)
        return (
            phi_min * self.d0,
            phi_max * self.d0,
            phi_max * max(self.alpha1, self.alpha2),
        )

    def validate_bounds(self, crange=(-2.0, 2.0), samples=100_000):
        """Sample the viscosity law over crange and check the declared bound.

        Raises InvalidParameterError if mu leaves [1/mu0, mu0] or |mu'|
        exceeds mu0 anywhere in the sample.
        """
        s = np.linspace(crange[0], crange[1], samples)
        mu = np.asarray(self.viscosity.value(s), dtype=float)
        dmu = np.asarray(self.viscosity.derivative(s), dtype=float)
        mu0 = self.viscosity.bound
        if mu.min() < 1.0 / mu0 or mu.max() > mu0:
            raise InvalidParameterError(
                f"viscosity law '{self.viscosity.name}' leaves "
                f"[{1.0 / mu0:.3e}, {mu0:.3e}] on c in {crange}")
        if np.abs(dmu).max() > mu0:
            raise InvalidParameterError(
                f"viscosity derivative exceeds declared bound {mu0:.3e}")


def section7_model():
    """The medium of the convergence experiments: two concentric subdomains."""
    return MediumModel(
        porosity=(0.6, 0.4),
        permeability=(0.012, 0.008),
        viscosity=logistic_viscosity(),
        d0=1.0, alpha1=1.0, alpha2=1.0, dr=1.0, dp=1.0,
    )


def viscosity(model, c):
    """Evaluate the model's viscosity law at concentration c."""
    return model.viscosity.value(c)


def dispersion_tensor(model, u, label):
    """Velocity-dependent dispersion tensor, vectorized over points.

    Parameters
    ----------
    u : (..., 2) array
        Velocity vectors.
    label : int or (...) int array
        Subdomain label(s) fixing the porosity.

    Returns
    -------
    (..., 2, 2) array, symmetric positive definite.
    """
    u = np.asarray(u, dtype=float)
    phi = np.asarray(model.phi(label), dtype=float)
    single = u.ndim == 1
    if single:
        u = u[None, :]
        phi = np.atleast_1d(phi)
    out = _tensor_from_phi(model, u, phi)
    return out[0] if single else out


def _tensor_from_phi(model, u, phi):
    speed = np.linalg.norm(u, axis=-1)
    phi = np.broadcast_to(phi, speed.shape)
    pe = model.dp * speed
    fmag = pe / (pe + model.dr) * speed          # F(Pe) |u|
    eye = np.eye(2)
    out = np.multiply.outer(np.full(speed.shape, model.d0), eye)
    big = speed > _U_FLOOR
    if np.any(big):
        ub = u[big]
        proj = ub[..., :, None] * ub[..., None, :] / (speed[big] ** 2)[..., None, None]
        mech = fmag[big][..., None, None] * (
            model.alpha1 * eye + (model.alpha2 - model.alpha1) * proj
        )
        out[big] += mech
    return phi[..., None, None] * out


def dispersion_tensor_inverse(model, u, label):
    """Inverse of the dispersion tensor; D @ D^{-1} = I to machine precision."""
    return _inv2x2(dispersion_tensor(model, u, label))


def _inv2x2(t):
    a = t[..., 0, 0]
    b = t[..., 0, 1]
    c = t[..., 1, 0]
    d = t[..., 1, 1]
    det = a * d - b * c
    inv = np.empty_like(t)
    inv[..., 0, 0] = d / det
    inv[..., 0, 1] = -b / det
    inv[..., 1, 0] = -c / det
    inv[..., 1, 1] = a / det
    return inv
