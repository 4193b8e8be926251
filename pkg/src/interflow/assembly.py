"""Sparse assembly of the saddle-point systems solved at every time step.

Element contributions are computed in bulk with einsum over all elements,
accumulated in coordinate form and compressed, with duplicate entries
summed.  Nonlinear coefficients (viscosity of the current concentration,
inverse dispersion of the current velocity) are sampled pointwise at the
quadrature nodes of each element.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .coefficients import _inv2x2, dispersion_tensor, viscosity
from .errors import CompatibilityError, InvalidParameterError
from .quadrature import build_quadrature
from .spaces import _eval_scalar_function, scalar_basis_at


def default_quad_order(r):
    """Volume rule exact for the polynomial part of every bilinear form."""
    return 2 * r + 2


# ---------------------------------------------------------------------------
# scatter helpers


def scatter_matrix(local, rows, cols, shape):
    """Sum (nelem, nr, nc) local blocks into a CSR matrix.

    Row/col index -1 marks a constrained dof; those entries are dropped.
    """
    nt, nr, nc = local.shape
    rr = np.repeat(rows[:, :, None], nc, axis=2).ravel()
    cc = np.repeat(cols[:, None, :], nr, axis=1).ravel()
    vv = local.ravel()
    keep = (rr >= 0) & (cc >= 0)
    mat = sp.coo_matrix((vv[keep], (rr[keep], cc[keep])), shape=shape)
    return mat.tocsr()


def scatter_vector(local, dofs, n):
    """Sum (nelem, nl) local vectors into a dense vector of length n."""
    out = np.zeros(n)
    keep = dofs >= 0
    np.add.at(out, dofs[keep], local[keep])
    return out


# ---------------------------------------------------------------------------
# building blocks


def flux_mass_matrix(flux, weight, quad):
    """(weight psi_b, psi_a) over the flux space.

    ``weight`` has shape (nelem, nq) for a scalar coefficient or
    (nelem, nq, 2, 2) for a tensor one.
    """
    pv, _ = flux.physical_basis(quad.points)
    if weight.ndim == 2:
        wb = weight[:, None, :, None] * pv
    else:
        wb = np.einsum("kqij,kaqj->kaqi", weight, pv)
    local = np.einsum("q,kaqi,kbqi,k->kab", quad.weights, pv, wb,
                      flux.geom.detB)
    local *= flux.signs[:, :, None] * flux.signs[:, None, :]
    return scatter_matrix(local, flux.cell2dof, flux.cell2dof,
                          (flux.ndof, flux.ndof))


def divergence_matrix(flux, scalar, quad):
    """(div psi_a, phi_k): scalar-test rows, flux-trial columns.

    The physical Jacobians cancel, so a single reference block serves all
    elements up to the per-edge orientation signs.
    """
    from .spaces import flux_basis_at

    svals = scalar_basis_at(scalar.r, quad.points)
    _, divs = flux_basis_at(flux.r, quad.points)
    ref = np.einsum("q,kq,aq->ka", quad.weights, svals, divs)
    local = ref[None, :, :] * flux.signs[:, None, :]
    return scatter_matrix(local, scalar.cell_dofs(), flux.cell2dof,
                          (scalar.ndof, flux.ndof))


def scalar_mass_matrix(scalar, weight, quad):
    """(weight phi_l, phi_k) with pointwise weight of shape (nelem, nq)."""
    svals = scalar_basis_at(scalar.r, quad.points)
    local = np.einsum("kq,q,aq,bq,k->kab", weight, quad.weights, svals, svals,
                      scalar.geom.detB)
    dofs = scalar.cell_dofs()
    return scatter_matrix(local, dofs, dofs, (scalar.ndof, scalar.ndof))


def convection_matrix(flux, scalar, vec_at_q, quad):
    """(vec . psi_a, phi_k) with a pointwise vector field (nelem, nq, 2)."""
    pv, _ = flux.physical_basis(quad.points)
    svals = scalar_basis_at(scalar.r, quad.points)
    local = np.einsum("q,kqi,kaqi,bq,k->kba", quad.weights, vec_at_q, pv,
                      svals, flux.geom.detB)
    local *= flux.signs[:, None, :]
    return scatter_matrix(local, scalar.cell_dofs(), flux.cell2dof,
                          (scalar.ndof, flux.ndof))


def scalar_load_vector(scalar, values_at_q, quad):
    """(f, phi_k) from pointwise values of shape (nelem, nq)."""
    svals = scalar_basis_at(scalar.r, quad.points)
    local = np.einsum("kq,q,aq,k->ka", values_at_q, quad.weights, svals,
                      scalar.geom.detB)
    return local.ravel()


# ---------------------------------------------------------------------------
# saddle systems


@dataclass
class SaddleSystem:
    """Block system [[A, -B^T], [B - G, Cc]] plus an optional mean-value row.

    A is the (weighted, symmetric positive definite) flux mass block and B
    the divergence coupling.  G (convective coupling) and Cc (scalar
    reaction/mass) appear only in the concentration system.  When
    ``mean_vector`` is present, a bordering row/column enforces
    mean_vector . scalar_unknown = mean_target through one Lagrange
    multiplier.
    """

    A: sp.spmatrix
    B: sp.spmatrix
    rhs_flux: np.ndarray
    rhs_scalar: np.ndarray
    Cc: Optional[sp.spmatrix] = None
    G: Optional[sp.spmatrix] = None
    mean_vector: Optional[np.ndarray] = None
    mean_target: float = 0.0

    @property
    def n_flux(self):
        return self.A.shape[0]

    @property
    def n_scalar(self):
        return self.B.shape[0]

    @property
    def has_mean_row(self):
        return self.mean_vector is not None

    def matrix(self):
        lower_left = self.B - self.G if self.G is not None else self.B
        blocks = [
            [self.A, -self.B.T],
            [lower_left, self.Cc],
        ]
        if self.has_mean_row:
            m = sp.csr_matrix(self.mean_vector[:, None])
            zf = sp.csr_matrix((self.n_flux, 1))
            blocks[0].append(zf)
            blocks[1].append(m)
            blocks.append([zf.T, m.T, None])
        return sp.bmat(blocks, format="csr")

    def rhs(self):
        parts = [self.rhs_flux, self.rhs_scalar]
        if self.has_mean_row:
            parts.append([self.mean_target])
        return np.concatenate(parts)

    def without_mean_row(self):
        return SaddleSystem(self.A, self.B, self.rhs_flux, self.rhs_scalar,
                            Cc=self.Cc, G=self.G)

    def split(self, x):
        """Split a solution vector into (flux, scalar, multiplier)."""
        nf, ns = self.n_flux, self.n_scalar
        mult = float(x[nf + ns]) if self.has_mean_row else None
        return x[:nf], x[nf:nf + ns], mult


def dump_matrix(matrix, path):
    """Write a sparse matrix in coordinate text form: ``row col value``."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.16E}\n")


def assemble_pressure_system(spaces, model, concentration, source,
                             quad_order=None, check_compatibility=False):
    """System for the pressure/velocity pair at one time level.

    Encodes (mu(C_h)/k U, v) = (P, div v) and (div U, phi) = (source, phi)
    with a mean-zero constraint row on P.  ``concentration`` supplies the
    lagged concentration coefficients; ``source`` is a callable of (n, 2)
    point arrays giving the net injection at the current time.

    With ``check_compatibility`` (well mode), raises CompatibilityError
    when the net source integral is not numerically zero.
    """
    scalar, flux = spaces
    quad = build_quadrature(quad_order or default_quad_order(scalar.r))
    cq = scalar.eval(concentration.vector, quad.points)
    labels = scalar.mesh.labels
    weight = np.asarray(viscosity(model, cq), dtype=float)
    weight /= model.k(labels)[:, None]

    amat = flux_mass_matrix(flux, weight, quad)
    bmat = divergence_matrix(flux, scalar, quad)

    phys = scalar.geom.map_points(quad.points)
    src = _eval_scalar_function(source, phys.reshape(-1, 2)).reshape(
        phys.shape[:2])
    rhs_scalar = scalar_load_vector(scalar, src, quad)

    if check_compatibility:
        total = float(np.einsum("kq,q,k->", src, quad.weights,
                                scalar.geom.detB))
        norm = float(np.einsum("kq,q,k->", np.abs(src), quad.weights,
                               scalar.geom.detB))
        if abs(total) > 1e-8 * max(norm, 1e-300):
            raise CompatibilityError(
                f"net source integral {total:.3e} violates the "
                f"compatibility condition (|integral| > 1e-8 * {norm:.3e})")

    return SaddleSystem(
        A=amat, B=bmat,
        rhs_flux=np.zeros(flux.ndof), rhs_scalar=rhs_scalar,
        mean_vector=scalar.mean_vector(), mean_target=0.0)


def assemble_concentration_system(spaces, model, velocity, prev_concentration,
                                  tau, source=None, injection=None,
                                  injected_concentration=None,
                                  quad_order=None):
    """Implicit system for the concentration/diffusive-flux pair.

    Encodes, with D = D(U_h, x) evaluated from the lagged velocity,

        (D^{-1} W, v) = (C, div v),
        (Phi/tau C, phi) + (div W, phi) - (D^{-1} U_h . W, phi) [+ (q_I C, phi)]
            = (Phi/tau C_prev + data, phi),

    where data is the free source f (manufactured mode, ``source``) or
    c_hat q_I (well mode, ``injection``/``injected_concentration``).
    """
    if tau <= 0:
        raise InvalidParameterError(f"time step tau must be positive, got {tau}")
    manufactured = source is not None
    wells = injection is not None
    if manufactured == wells:
        raise InvalidParameterError(
            "provide exactly one of 'source' (manufactured mode) or "
            "'injection' (well mode)")
    if wells and injected_concentration is None:
        raise InvalidParameterError(
            "well mode needs 'injected_concentration' alongside 'injection'")

    scalar, flux = spaces
    quad = build_quadrature(quad_order or default_quad_order(scalar.r))
    labels = scalar.mesh.labels
    phi = model.phi(labels)

    uq = flux.eval(velocity.vector, quad.points)          # (nelem, nq, 2)
    dinv = _inv2x2(dispersion_tensor(model, uq, labels[:, None]))
    amat = flux_mass_matrix(flux, dinv, quad)
    bmat = divergence_matrix(flux, scalar, quad)
    dinv_u = np.einsum("kqij,kqj->kqi", dinv, uq)
    gmat = convection_matrix(flux, scalar, dinv_u, quad)

    nq = len(quad.weights)
    mass_weight = np.repeat(phi[:, None] / tau, nq, axis=1)
    phys = scalar.geom.map_points(quad.points)
    if wells:
        qi = _eval_scalar_function(injection, phys.reshape(-1, 2)).reshape(
            phys.shape[:2])
        mass_weight = mass_weight + qi
    cmat = scalar_mass_matrix(scalar, mass_weight, quad)

    prev_q = scalar.eval(prev_concentration.vector, quad.points)
    data = phi[:, None] / tau * prev_q
    if manufactured:
        data = data + _eval_scalar_function(
            source, phys.reshape(-1, 2)).reshape(phys.shape[:2])
    else:
        chat = _eval_scalar_function(
            injected_concentration, phys.reshape(-1, 2)).reshape(phys.shape[:2])
        data = data + chat * qi
    rhs_scalar = scalar_load_vector(scalar, data, quad)

    return SaddleSystem(
        A=amat, B=bmat,
        rhs_flux=np.zeros(flux.ndof), rhs_scalar=rhs_scalar,
        Cc=cmat, G=gmat)
