"""Discrete spaces: discontinuous scalars and H(div)-conforming fluxes.

The scalar space is element-wise polynomial of total degree <= r with no
inter-element continuity.  The flux space is Raviart-Thomas of degree r
(local span P_r^2 + x P~_r) with edge-moment degrees of freedom shared
across interior and interface edges, which makes the normal trace
single-valued there; boundary-edge dofs are omitted, so every member has
zero normal trace on the outer boundary.

Vector fields transform from the reference element by the contravariant
Piola map v = B v_ref / det B, which preserves edge flux integrals, so a
single reference basis serves all elements once per-edge orientation
signs are tracked.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError, SolverError
from .mesh import BOUNDARY
from .quadrature import build_quadrature

_DOF_QUAD_ORDER = 10  # interpolation / projection data integrals


# ---------------------------------------------------------------------------
# reference bases


def _scalar_ref_nodes(r):
    if r == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def scalar_basis_at(r, pts):
    """Nodal basis values at reference points, shape (nloc, npts)."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    if r == 0:
        return np.ones((1, len(pts)))
    return np.stack([1.0 - x - y, x, y])


def scalar_gradients(r):
    """Reference gradients of the nodal basis (constant for r <= 1)."""
    if r == 0:
        return np.zeros((1, 2))
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _rt_monomials(r, pts):
    """Values (nm, npts, 2) and divergences (nm, npts) of the RT_r span."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    n = len(pts)
    o, z = np.ones(n), np.zeros(n)
    if r == 0:
        vals = np.stack([
            np.stack([o, z], axis=-1),
            np.stack([z, o], axis=-1),
            np.stack([x, y], axis=-1),
        ])
        divs = np.stack([z, z, 2.0 * o])
    elif r == 1:
        vals = np.stack([
            np.stack([o, z], axis=-1),
            np.stack([x, z], axis=-1),
            np.stack([y, z], axis=-1),
            np.stack([z, o], axis=-1),
            np.stack([z, x], axis=-1),
            np.stack([z, y], axis=-1),
            np.stack([x * x, x * y], axis=-1),
            np.stack([x * y, y * y], axis=-1),
        ])
        divs = np.stack([z, o, z, z, z, o, 3.0 * x, 3.0 * y])
    else:
        raise InvalidParameterError(f"degree r must be 0 or 1, got {r}")
    return vals, divs


# Reference edges in the counter-clockwise pattern: edge j runs from local
# vertex (j+1)%3 to (j+2)%3.  Normals are tangents rotated by -90 degrees
# and carry the edge-length factor, so integrals in the parameter t need
# no extra Jacobian.
_REF_EDGE_START = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
_REF_EDGE_END = np.array([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]])
_REF_EDGE_NORMAL = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _edge_legendre(k, t):
    return np.ones_like(t) if k == 0 else 2.0 * t - 1.0


@lru_cache(maxsize=None)
def _rt_reference(r):
    """Coefficients of the RT_r nodal basis in the monomial span.

    Dof ordering: (edge 0, moments 0..r), (edge 1, ...), (edge 2, ...),
    then r(r+1) interior moments against constant vector fields.
    """
    if r not in (0, 1):
        raise InvalidParameterError(f"degree r must be 0 or 1, got {r}")
    nloc = (r + 1) * (r + 3)
    quad = build_quadrature(6)
    t = quad.edge_points
    wt = quad.edge_weights
    rows = []
    for j in range(3):
        pts = _REF_EDGE_START[j] + np.outer(t, _REF_EDGE_END[j] - _REF_EDGE_START[j])
        mono_vals, _ = _rt_monomials(r, pts)
        flux = mono_vals @ _REF_EDGE_NORMAL[j]          # (nm, nq)
        for k in range(r + 1):
            rows.append(flux @ (wt * _edge_legendre(k, t)))
    if r >= 1:
        mono_vals, _ = _rt_monomials(r, quad.points)
        for comp in range(2):
            rows.append(mono_vals[:, :, comp] @ quad.weights)
    vmat = np.stack(rows)                               # (ndof, nm)
    assert vmat.shape == (nloc, nloc)
    return np.linalg.inv(vmat)


def flux_basis_at(r, pts):
    """Reference RT_r basis values (nloc, npts, 2) and divergences (nloc, npts)."""
    coeff = _rt_reference(r)
    mono_vals, mono_divs = _rt_monomials(r, pts)
    vals = np.einsum("mb,mpi->bpi", coeff, mono_vals)
    divs = np.einsum("mb,mp->bp", coeff, mono_divs)
    return vals, divs


# ---------------------------------------------------------------------------
# element geometry


class ElementGeometry:
    """Affine maps x = a0 + B x_ref for every element of a mesh."""

    def __init__(self, mesh):
        tri = mesh.triangles
        v = mesh.vertices
        self.origin = v[tri[:, 0]]
        self.B = np.stack([v[tri[:, 1]] - v[tri[:, 0]],
                           v[tri[:, 2]] - v[tri[:, 0]]], axis=-1)
        self.detB = (self.B[:, 0, 0] * self.B[:, 1, 1]
                     - self.B[:, 0, 1] * self.B[:, 1, 0])
        inv = np.empty_like(self.B)
        inv[:, 0, 0] = self.B[:, 1, 1]
        inv[:, 0, 1] = -self.B[:, 0, 1]
        inv[:, 1, 0] = -self.B[:, 1, 0]
        inv[:, 1, 1] = self.B[:, 0, 0]
        self.Binv = inv / self.detB[:, None, None]

    def map_points(self, ref_pts):
        """Physical images of reference points, shape (nelem, npts, 2)."""
        return self.origin[:, None, :] + np.einsum(
            "kij,pj->kpi", self.B, np.asarray(ref_pts, dtype=float))


# ---------------------------------------------------------------------------
# spaces


@dataclass(frozen=True)
class ScalarSpace:
    """Discontinuous P_r space with element-local Lagrange dofs."""

    mesh: object = field(repr=False)
    r: int
    geom: ElementGeometry = field(repr=False)
    mean_constrained: bool = False

    @property
    def nloc(self):
        return (self.r + 1) * (self.r + 2) // 2

    @property
    def ndof(self):
        return self.mesh.num_triangles * self.nloc

    def cell_dofs(self):
        return np.arange(self.ndof).reshape(self.mesh.num_triangles, self.nloc)

    def local_coeffs(self, vec):
        return np.asarray(vec).reshape(self.mesh.num_triangles, self.nloc)

    def eval(self, vec, ref_pts):
        """Field values at reference points in every element, (nelem, npts)."""
        vals = scalar_basis_at(self.r, ref_pts)
        return np.einsum("ka,ap->kp", self.local_coeffs(vec), vals)

    def mean_vector(self):
        """Weights m with m . coeffs = integral of the field over the domain."""
        quad = build_quadrature(max(2, self.r + 1))
        vals = scalar_basis_at(self.r, quad.points)
        ref = vals @ quad.weights
        return np.outer(self.geom.detB, ref).ravel()


@dataclass(frozen=True)
class FluxSpace:
    """Raviart-Thomas space of degree r with zero boundary normal trace."""

    mesh: object = field(repr=False)
    r: int
    geom: ElementGeometry = field(repr=False)
    cell2dof: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)
    edge_dof: np.ndarray = field(repr=False)   # (nedges,) first dof or -1
    n_edge_dofs: int = 0
    ndof: int = 0

    @property
    def nloc(self):
        return (self.r + 1) * (self.r + 3)

    @property
    def n_interior(self):
        return self.r * (self.r + 1)

    def local_coeffs(self, vec):
        vec = np.asarray(vec)
        safe = np.where(self.cell2dof >= 0, self.cell2dof, 0)
        return np.where(self.cell2dof >= 0, vec[safe] * self.signs, 0.0)

    def physical_basis(self, ref_pts):
        """Piola-mapped basis values (nelem, nloc, npts, 2) and divergences."""
        vals, divs = flux_basis_at(self.r, ref_pts)
        pv = np.einsum("kij,apj->kapi", self.geom.B, vals)
        pv /= self.geom.detB[:, None, None, None]
        pd = divs[None, :, :] / self.geom.detB[:, None, None]
        return pv, pd

    def eval(self, vec, ref_pts):
        """Field values at reference points in every element, (nelem, npts, 2)."""
        pv, _ = self.physical_basis(ref_pts)
        return np.einsum("ka,kapi->kpi", self.local_coeffs(vec), pv)

    def eval_div(self, vec, ref_pts):
        _, pd = self.physical_basis(ref_pts)
        return np.einsum("ka,kap->kp", self.local_coeffs(vec), pd)


class SpacePair(NamedTuple):
    scalar: ScalarSpace
    flux: FluxSpace


def build_spaces(mesh, r):
    """Construct the scalar/flux pair of degree r on a mesh.

    r = 1 is the production default; r = 0 is supported for debugging.
    """
    if r not in (0, 1):
        raise InvalidParameterError(f"degree r must be 0 or 1, got {r!r}")
    geom = ElementGeometry(mesh)
    scalar = ScalarSpace(mesh, r, geom)

    nem = r + 1                      # moments per edge
    nint = r * (r + 1)
    ne = mesh.num_edges
    edge_dof = np.full(ne, -1, dtype=int)
    nonbnd = np.nonzero(mesh.edge_kind != BOUNDARY)[0]
    edge_dof[nonbnd] = np.arange(len(nonbnd)) * nem
    n_edge_dofs = len(nonbnd) * nem
    ndof = n_edge_dofs + mesh.num_triangles * nint

    # edge lookup: sorted vertex pair -> edge index
    lookup = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}

    nt = mesh.num_triangles
    nloc = (r + 1) * (r + 3)
    cell2dof = np.full((nt, nloc), -1, dtype=int)
    signs = np.zeros((nt, nloc))
    tris = mesh.triangles
    for kelem in range(nt):
        a = tris[kelem]
        for j in range(3):
            p, q = a[(j + 1) % 3], a[(j + 2) % 3]
            eidx = lookup[(min(p, q), max(p, q))]
            base = edge_dof[eidx]
            if base < 0:
                continue  # boundary edge: dofs constrained to zero
            aligned = p < q
            for k in range(nem):
                cell2dof[kelem, j * nem + k] = base + k
                signs[kelem, j * nem + k] = 1.0 if aligned else (-1.0) ** (k + 1)
        for i in range(nint):
            cell2dof[kelem, 3 * nem + i] = n_edge_dofs + kelem * nint + i
            signs[kelem, 3 * nem + i] = 1.0
    flux = FluxSpace(mesh, r, geom, cell2dof, signs, edge_dof,
                     n_edge_dofs, ndof)
    return SpacePair(scalar, flux)


@dataclass
class FieldCoefficients:
    """A coefficient vector paired with its space."""

    space: object
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        if self.vector.shape != (self.space.ndof,):
            raise InvalidParameterError(
                f"coefficient vector has length {self.vector.shape}, "
                f"space has {self.space.ndof} dofs")

    def eval(self, ref_pts):
        return self.space.eval(self.vector, ref_pts)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("dof_index,value\n")
            for i, v in enumerate(self.vector):
                fh.write(f"{i},{v:.16E}\n")


def zero_field(space):
    return FieldCoefficients(space, np.zeros(space.ndof))


# ---------------------------------------------------------------------------
# function evaluation helpers


def _eval_scalar_function(f, pts):
    """Evaluate f on an (n, 2) point array, tolerating scalar-only callables."""
    try:
        out = np.asarray(f(pts), dtype=float)
        if out.shape == (len(pts),):
            return out
    except Exception:
        pass
    return np.array([float(f(p)) for p in pts])


def _eval_vector_function(f, pts):
    try:
        out = np.asarray(f(pts), dtype=float)
        if out.shape == (len(pts), 2):
            return out
    except Exception:
        pass
    return np.array([np.asarray(f(p), dtype=float) for p in pts])


# ---------------------------------------------------------------------------
# interpolation and projections


def lagrange_interpolate(f, space):
    """Interpolate at the principal-lattice Lagrange nodes of every element."""
    nodes = _scalar_ref_nodes(space.r)
    phys = space.geom.map_points(nodes)            # (nelem, nloc, 2)
    vals = _eval_scalar_function(f, phys.reshape(-1, 2))
    return FieldCoefficients(space, vals)


def l2_project(f, space, quad_order=None):
    """Element-wise L2 projection onto the scalar space.

    The result satisfies (f - proj, chi) = 0 for every basis function chi,
    up to quadrature at the given order (default 2r + 4).
    """
    order = quad_order or 2 * space.r + 4
    quad = build_quadrature(order)
    vals = scalar_basis_at(space.r, quad.points)    # (nloc, nq)
    mass = np.einsum("q,aq,bq->ab", quad.weights, vals, vals)
    phys = space.geom.map_points(quad.points)
    fq = _eval_scalar_function(f, phys.reshape(-1, 2)).reshape(phys.shape[:2])
    rhs = np.einsum("q,aq,kq->ka", quad.weights, vals, fq)
    try:
        coeffs = np.linalg.solve(mass, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"degenerate element mass matrix: {exc}") from exc
    return FieldCoefficients(space, coeffs.ravel())


def fortin_project(v, space, quad_order=_DOF_QUAD_ORDER):
    """Canonical Raviart-Thomas interpolant (edge and interior moments).

    Matching the edge-moment dofs makes the divergence commute with the
    element-wise L2 projection: (div(v - Q v), chi) = 0 for chi in the
    scalar space.
    """
    mesh = space.mesh
    quad = build_quadrature(quad_order)
    t, wt = quad.edge_points, quad.edge_weights
    vec = np.zeros(space.ndof)

    nonbnd = np.nonzero(space.edge_dof >= 0)[0]
    va = mesh.vertices[mesh.edges[nonbnd, 0]]
    vb = mesh.vertices[mesh.edges[nonbnd, 1]]
    tang = vb - va
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=-1)
    pts = va[:, None, :] + t[None, :, None] * tang[:, None, :]
    fv = _eval_vector_function(v, pts.reshape(-1, 2)).reshape(len(nonbnd), -1, 2)
    flux = np.einsum("eqi,ei->eq", fv, normal)
    for k in range(space.r + 1):
        vec[space.edge_dof[nonbnd] + k] = flux @ (wt * _edge_legendre(k, t))

    if space.n_interior:
        phys = space.geom.map_points(quad.points)
        fq = _eval_vector_function(v, phys.reshape(-1, 2)).reshape(phys.shape)
        cellint = np.einsum("q,kqi->ki", quad.weights, fq) * space.geom.detB[:, None]
        interior = np.einsum("kij,kj->ki", space.geom.Binv, cellint)
        vec[space.n_edge_dofs:] = interior.ravel()
    return FieldCoefficients(space, vec)


def fortin_commuting_residual(v, spaces, quad_order=_DOF_QUAD_ORDER):
    """Residual of (div(v - Q v), chi) = 0 over all scalar basis functions.

    The exact-field side is integrated by parts element-wise with the same
    edge/volume rules that define the projection moments, so the identity
    holds to rounding for any admissible v.
    """
    from .assembly import divergence_matrix  # deferred: avoids module cycle

    scalar, flux = spaces
    mesh = scalar.mesh
    quad = build_quadrature(quad_order)
    proj = fortin_project(v, flux, quad_order)
    lhs = divergence_matrix(flux, scalar, quad) @ proj.vector

    rhs = np.zeros((mesh.num_triangles, scalar.nloc))
    t, wt = quad.edge_points, quad.edge_weights
    tris = mesh.triangles
    verts = mesh.vertices
    for j in range(3):
        p = verts[tris[:, (j + 1) % 3]]
        q = verts[tris[:, (j + 2) % 3]]
        normal = np.stack([(q - p)[:, 1], -(q - p)[:, 0]], axis=-1)
        pts = p[:, None, :] + t[None, :, None] * (q - p)[:, None, :]
        fv = _eval_vector_function(v, pts.reshape(-1, 2)).reshape(pts.shape)
        flux_vals = np.einsum("kqi,ki->kq", fv, normal)
        ref_pts = _REF_EDGE_START[j] + np.outer(
            t, _REF_EDGE_END[j] - _REF_EDGE_START[j])
        svals = scalar_basis_at(scalar.r, ref_pts)
        rhs += np.einsum("kq,aq,q->ka", flux_vals, svals, wt)
    grads = scalar_gradients(scalar.r)
    phys_grads = np.einsum("kji,aj->kai", scalar.geom.Binv, grads)
    phys = scalar.geom.map_points(quad.points)
    fq = _eval_vector_function(v, phys.reshape(-1, 2)).reshape(phys.shape)
    rhs -= np.einsum("q,kqi,kai,k->ka", quad.weights, fq, phys_grads,
                     scalar.geom.detB)
    return float(np.max(np.abs(lhs - rhs.ravel())))


def divergence_field(flux_coeffs, scalar_space):
    """Divergence of a flux field, expressed exactly in the scalar space."""
    space = flux_coeffs.space
    nodes = _scalar_ref_nodes(scalar_space.r)
    div_vals = space.eval_div(flux_coeffs.vector, nodes)
    return FieldCoefficients(scalar_space, div_vals.ravel())


def mixed_ritz_project(c, w, div_w, tensor, spaces, quad_order=None):
    """Mixed Ritz projection of a scalar/flux pair (c, w).

    Solves for (c_h, w_h) in the discrete pair such that

        (div(w_h - w), chi)            = 0   for all scalar chi,
        (A^{-1}(w_h - w), v) - (c_h - c, div v) = 0   for all flux v,

    with the tie-break that c_h and c have equal means.  ``tensor`` maps an
    (n, 2) point array to (n, 2, 2) SPD matrices; ``div_w`` evaluates the
    divergence of w.

    Returns (scalar FieldCoefficients, flux FieldCoefficients).
    """
    from . import assembly  # deferred: assembly builds on this module
    from .scheme import solve_saddle

    scalar, flux = spaces
    order = quad_order or 2 * max(scalar.r, 1) + 4
    quad = build_quadrature(order)
    phys = scalar.geom.map_points(quad.points)
    flat = phys.reshape(-1, 2)
    tens = np.asarray(tensor(flat), dtype=float).reshape(
        phys.shape[0], phys.shape[1], 2, 2)
    from .coefficients import _inv2x2

    amat = assembly.flux_mass_matrix(flux, _inv2x2(tens), quad)
    bmat = assembly.divergence_matrix(flux, scalar, quad)
    mean = scalar.mean_vector()

    wq = _eval_vector_function(w, flat).reshape(phys.shape)
    cq = _eval_scalar_function(c, flat).reshape(phys.shape[:2])
    dwq = _eval_scalar_function(div_w, flat).reshape(phys.shape[:2])

    pv, pd = flux.physical_basis(quad.points)
    tinv_w = np.einsum("kqij,kqj->kqi", _inv2x2(tens), wq)
    rf_loc = np.einsum("q,kqi,kaqi,k->ka", quad.weights, tinv_w, pv,
                       scalar.geom.detB)
    rf_loc -= np.einsum("q,kq,kaq,k->ka", quad.weights, cq, pd,
                        scalar.geom.detB)
    rhs_flux = assembly.scatter_vector(rf_loc * flux.signs, flux.cell2dof,
                                       flux.ndof)

    svals = scalar_basis_at(scalar.r, quad.points)
    rs_loc = np.einsum("q,kq,aq,k->ka", quad.weights, dwq, svals,
                       scalar.geom.detB)
    rhs_scalar = rs_loc.ravel()
    mean_target = float(np.einsum("q,kq,k->", quad.weights, cq,
                                  scalar.geom.detB))

    system = assembly.SaddleSystem(
        A=amat, B=bmat, rhs_flux=rhs_flux, rhs_scalar=rhs_scalar,
        mean_vector=mean, mean_target=mean_target)
    wvec, cvec, _ = solve_saddle(system)
    return FieldCoefficients(scalar, cvec), FieldCoefficients(flux, wvec)
