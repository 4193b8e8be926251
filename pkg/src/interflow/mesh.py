"""Conforming triangulations of a disk split by an internal circular interface.

A mesh knows its vertices, labelled triangles and classified edges.  Edge
markers distinguish interior edges, outer-boundary edges and interface
edges; interface edges always separate two triangles with different
subdomain labels.  Meshes are immutable after construction: all arrays are
set read-only, so concurrent read access is safe.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import (
    InvalidParameterError,
    MeshFormatError,
    MeshGenerationError,
    MeshValidationError,
)

# edge kinds
INTERIOR = 0
BOUNDARY = 1
INTERFACE = 2

_CURVE_TOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """A conforming triangulation with subdomain labels and edge markers.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
        Vertex indices, counter-clockwise.
    labels : (nt,) int array
        Subdomain label per triangle.
    edges : (ne, 2) int array
        Vertex index pairs, lower index first.
    edge_kind : (ne,) int array
        One of INTERIOR, BOUNDARY, INTERFACE.
    edge_label : (ne,) int array
        For interface edges, the label of the enclosed subdomain; -1 otherwise.
    edge_tris : (ne, 2) int array
        Incident triangle indices (-1 for the missing side of boundary edges).
    """

    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_kind: np.ndarray = field(repr=False)
    edge_label: np.ndarray = field(repr=False)
    edge_tris: np.ndarray = field(repr=False)

    def __post_init__(self):
        for a in (self.vertices, self.triangles, self.labels, self.edges,
                  self.edge_kind, self.edge_label, self.edge_tris):
            a.setflags(write=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Maximum element diameter."""
        return mesh_size(self)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])

    def min_angle(self):
        """Smallest interior angle over all elements, in degrees."""
        p = self.vertices[self.triangles]
        angs = []
        for i in range(3):
            a, b, c = p[:, i], p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            u, v = b - a, c - a
            cosv = (u * v).sum(1) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angs.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
        return float(np.min(angs))


def mesh_size(mesh):
    """Maximum over triangles of the largest vertex-pair distance."""
    p = mesh.vertices[mesh.triangles]
    d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    return float(np.max([d01, d12, d20]))


# ---------------------------------------------------------------------------
# construction from raw arrays


def _build_edges(triangles, labels):
    """Derive the edge table (sorted pairs, incidences) from triangles."""
    nt = len(triangles)
    raw = np.concatenate([
        triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]
    ])
    tri_of = np.tile(np.arange(nt), 3)
    raw_sorted = np.sort(raw, axis=1)
    edges, inv = np.unique(raw_sorted, axis=0, return_inverse=True)
    ne = len(edges)
    edge_tris = np.full((ne, 2), -1, dtype=int)
    counts = np.zeros(ne, dtype=int)
    for e, t in zip(inv, tri_of):
        if counts[e] >= 2:
            a, b = edges[e]
            raise MeshValidationError(
                f"edge ({a}, {b}) is shared by more than two triangles"
            )
        edge_tris[e, counts[e]] = t
        counts[e] += 1
    return edges, edge_tris, counts


def _classify_edges(edges, edge_tris, counts, labels):
    ne = len(edges)
    kind = np.empty(ne, dtype=int)
    elabel = np.full(ne, -1, dtype=int)
    for e in range(ne):
        if counts[e] == 1:
            kind[e] = BOUNDARY
        else:
            la, lb = labels[edge_tris[e, 0]], labels[edge_tris[e, 1]]
            if la == lb:
                kind[e] = INTERIOR
            else:
                kind[e] = INTERFACE
                elabel[e] = max(la, lb)
    return kind, elabel


def build_mesh(vertices, triangles, labels):
    """Assemble a Mesh from arrays, deriving and classifying the edge table."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=int)
    labels = np.ascontiguousarray(labels, dtype=int)
    edges, edge_tris, counts = _build_edges(triangles, labels)
    kind, elabel = _classify_edges(edges, edge_tris, counts, labels)
    mesh = Mesh(vertices, triangles, labels, edges, kind, elabel, edge_tris)
    validate_mesh(mesh)
    return mesh


def validate_mesh(mesh):
    """Check the structural invariants; raise MeshValidationError on failure."""
    areas = mesh.signed_areas()
    bad = np.nonzero(areas <= 0)[0]
    if bad.size:
        raise MeshValidationError(
            f"triangle {bad[0]} has non-positive signed area {areas[bad[0]]:.3e}"
        )
    counts = (mesh.edge_tris >= 0).sum(axis=1)
    for e in range(mesh.num_edges):
        a, b = mesh.edges[e]
        k = mesh.edge_kind[e]
        if k == BOUNDARY and counts[e] != 1:
            raise MeshValidationError(
                f"boundary edge ({a}, {b}) has {counts[e]} incident triangles"
            )
        if k in (INTERIOR, INTERFACE) and counts[e] != 2:
            raise MeshValidationError(
                f"edge ({a}, {b}) has {counts[e]} incident triangles, expected 2"
            )
        if k == INTERIOR:
            la, lb = mesh.labels[mesh.edge_tris[e]]
            if la != lb:
                raise MeshValidationError(
                    f"interior edge ({a}, {b}) separates different labels "
                    f"{la} and {lb}; it should be an interface edge"
                )
        if k == INTERFACE:
            la, lb = mesh.labels[mesh.edge_tris[e]]
            if la == lb:
                raise MeshValidationError(
                    f"interface edge ({a}, {b}) has the same label {la} on "
                    f"both sides"
                )
            if mesh.edge_label[e] not in (la, lb):
                raise MeshValidationError(
                    f"interface edge ({a}, {b}) carries label "
                    f"{mesh.edge_label[e]} but separates {la} and {lb}"
                )


# ---------------------------------------------------------------------------
# generation


def _hex_lattice(bbox, spacing):
    x0, x1, y0, y1 = bbox
    dy = spacing * np.sqrt(3.0) / 2.0
    ny = int(np.ceil((y1 - y0) / dy)) + 1
    nx = int(np.ceil((x1 - x0) / spacing)) + 2
    rows = []
    for j in range(ny):
        y = y0 + j * dy
        off = 0.5 * spacing if j % 2 else 0.0
        xs = x0 + off + spacing * np.arange(nx)
        rows.append(np.column_stack([xs, np.full(nx, y)]))
    return np.vstack(rows)


def generate_disk_interface_mesh(M, center=(0.3, 0.0), radius=0.3, seed=0,
                                 smooth_iters=60, min_angle=15.0):
    """Mesh the unit disk with a conforming internal circular interface.

    Places M equispaced vertices on the unit circle and M/2 on the
    interface circle, fills both subdomains with a jittered hexagonal
    lattice kept clear of the constraint polylines, and relaxes the fill
    by Laplacian smoothing under repeated Delaunay retriangulation.  The
    clearance bands guarantee that every interface chord is a Delaunay
    edge, so the final triangulation conforms to the interface polyline.

    Parameters
    ----------
    M : int
        Number of boundary vertices; even, >= 8.  The interface receives
        M/2 vertices, equispaced in arc length.
    center, radius : interface circle; must lie strictly inside the disk.
    seed : int
        Seed for the fill jitter (fixed default keeps runs reproducible).

    Returns
    -------
    Mesh
        Subdomain labels: 0 outside the interface circle, 1 inside.
    """
    if not isinstance(M, (int, np.integer)) or M < 8 or M % 2:
        raise InvalidParameterError(
            f"boundary node count M must be an even integer >= 8, got {M!r}"
        )
    c0 = np.asarray(center, dtype=float)
    rho = float(radius)
    if rho <= 0 or np.hypot(*c0) + rho >= 1.0:
        raise InvalidParameterError(
            "interface circle must lie strictly inside the unit disk"
        )

    sb = 2.0 * np.pi / M            # boundary arc spacing
    si = 4.0 * np.pi * rho / M      # interface arc spacing (M/2 vertices)

    tb = 2.0 * np.pi * np.arange(M) / M
    bpts = np.column_stack([np.cos(tb), np.sin(tb)])
    ti = 2.0 * np.pi * np.arange(M // 2) / (M // 2)
    ipts = c0 + rho * np.column_stack([np.cos(ti), np.sin(ti)])
    nfix = M + M // 2

    # Clearance from each constraint circle, sized so that no fill point can
    # enter the diametral disk of any chord (which keeps chords Delaunay).
    chord_i = 2.0 * rho * np.sin(np.pi / (M // 2))
    sag_i = rho * (1.0 - np.cos(np.pi / (M // 2)))
    m_in = 0.52 * chord_i + sag_i + 1e-12
    m_out = max(0.52 * chord_i - sag_i, 0.3 * si)
    chord_b = 2.0 * np.sin(np.pi / M)
    sag_b = 1.0 - np.cos(np.pi / M)
    m_b = 0.52 * chord_b + sag_b

    rng = np.random.default_rng(seed)

    f1 = _hex_lattice((c0[0] - rho, c0[0] + rho, c0[1] - rho, c0[1] + rho), si)
    f1 = f1[np.hypot(*(f1 - c0).T) < rho - m_in]
    f1 += rng.uniform(-0.08, 0.08, f1.shape) * si

    f0 = _hex_lattice((-1.0, 1.0, -1.0, 1.0), sb)
    keep = (np.hypot(f0[:, 0], f0[:, 1]) < 1.0 - m_b) & (
        np.hypot(*(f0 - c0).T) > rho + m_out
    )
    f0 = f0[keep]
    f0 += rng.uniform(-0.08, 0.08, f0.shape) * sb

    pts = np.vstack([bpts, ipts, f1, f0])

    def clamp(q):
        r = np.hypot(q[:, 0], q[:, 1])
        far = r > 1.0 - m_b
        q[far] *= ((1.0 - m_b) / r[far])[:, None]
        d = np.hypot(*(q - c0).T)
        inside = d < rho
        for bad, tgt in (
            (inside & (d > rho - m_in), rho - m_in),
            (~inside & (d < rho + m_out), rho + m_out),
        ):
            dd = np.maximum(d[bad], 1e-12)
            q[bad] = c0 + (q[bad] - c0) * (tgt / dd)[:, None]
        return q

    pts[nfix:] = clamp(pts[nfix:])
    for _ in range(smooth_iters):
        simp = Delaunay(pts).simplices
        acc = np.zeros_like(pts)
        cnt = np.zeros(len(pts))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            i, j = simp[:, a], simp[:, b]
            np.add.at(acc, i, pts[j])
            np.add.at(cnt, i, 1)
            np.add.at(acc, j, pts[i])
            np.add.at(cnt, j, 1)
        pts[nfix:] = clamp(acc[nfix:] / cnt[nfix:, None])

    simp = Delaunay(pts).simplices.copy()
    p0, p1, p2 = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    u, v = p1 - p0, p2 - p0
    neg = (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) < 0
    simp[neg] = simp[neg][:, [0, 2, 1]]
    cent = pts[simp].mean(axis=1)
    labels = (np.hypot(*(cent - c0).T) < rho).astype(int)

    try:
        mesh = build_mesh(pts, simp, labels)
    except MeshValidationError as exc:
        raise MeshGenerationError(
            f"generated triangulation is not conforming (M={M}): {exc}"
        ) from exc

    _check_generated(mesh, M, c0, rho, min_angle)
    return mesh


def _check_generated(mesh, M, c0, rho, min_angle):
    ang = mesh.min_angle()
    if ang < min_angle:
        raise MeshGenerationError(
            f"generated mesh has min angle {ang:.2f} deg < {min_angle} deg (M={M})"
        )
    n_ifc = int((mesh.edge_kind == INTERFACE).sum())
    if n_ifc != M // 2:
        raise MeshGenerationError(
            f"expected {M // 2} interface edges, found {n_ifc} (M={M})"
        )
    bverts = np.unique(mesh.edges[mesh.edge_kind == BOUNDARY])
    if len(bverts) != M:
        raise MeshGenerationError(
            f"expected {M} boundary vertices, found {len(bverts)} (M={M})"
        )
    r = np.hypot(*mesh.vertices[bverts].T)
    if np.max(np.abs(r - 1.0)) > _CURVE_TOL:
        raise MeshGenerationError("boundary vertex off the unit circle")
    iverts = np.unique(mesh.edges[mesh.edge_kind == INTERFACE])
    d = np.hypot(*(mesh.vertices[iverts] - c0).T)
    if np.max(np.abs(d - rho)) > _CURVE_TOL:
        raise MeshGenerationError("interface vertex off the interface circle")


# ---------------------------------------------------------------------------
# text format:  mesh2d v1

_MARKER_NAMES = {INTERIOR: "int", BOUNDARY: "bnd"}


def save_mesh(mesh, path):
    """Write a mesh in the line-based ``mesh2d v1`` text format."""
    lines = ["mesh2d v1"]
    lines.append(f"vertices {mesh.num_vertices}")
    for x, y in mesh.vertices:
        lines.append(f"{x!r} {y!r}")
    lines.append(f"triangles {mesh.num_triangles}")
    for (i, j, k), lab in zip(mesh.triangles, mesh.labels):
        lines.append(f"{i} {j} {k} {lab}")
    lines.append(f"edges {mesh.num_edges}")
    for (i, j), kind, lab in zip(mesh.edges, mesh.edge_kind, mesh.edge_label):
        marker = f"ifc:{lab}" if kind == INTERFACE else _MARKER_NAMES[kind]
        lines.append(f"{i} {j} {marker}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a ``mesh2d v1`` file and validate every mesh invariant.

    Raises MeshFormatError (with a line number) for malformed input and
    MeshValidationError (naming the entity) for invariant violations,
    e.g. hanging nodes or interface edges with equal labels.
    """
    with open(path) as fh:
        raw = fh.readlines()

    tokens = []  # (line_no, [fields])
    for no, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.append((no, body.split()))

    if not tokens or tokens[0][1] != ["mesh2d", "v1"]:
        raise MeshFormatError("expected header 'mesh2d v1'",
                              line=tokens[0][0] if tokens else 1)
    pos = 1

    def section(name, width):
        nonlocal pos
        if pos >= len(tokens):
            raise MeshFormatError(f"missing section '{name}'", line=len(raw))
        no, fields = tokens[pos]
        if len(fields) != 2 or fields[0] != name:
            raise MeshFormatError(f"expected section header '{name} N'", line=no)
        try:
            count = int(fields[1])
        except ValueError:
            raise MeshFormatError(f"bad count in '{name}' header", line=no)
        pos += 1
        rows = []
        for _ in range(count):
            if pos >= len(tokens):
                raise MeshFormatError(
                    f"section '{name}' ends prematurely", line=len(raw))
            no, fields = tokens[pos]
            if len(fields) != width:
                raise MeshFormatError(
                    f"expected {width} fields in '{name}' entry", line=no)
            rows.append((no, fields))
            pos += 1
        return rows

    vrows = section("vertices", 2)
    trows = section("triangles", 4)
    erows = section("edges", 3)
    if pos != len(tokens):
        raise MeshFormatError("trailing content after edge section",
                              line=tokens[pos][0])

    def parse(rows, caster, what):
        out = []
        for no, fields in rows:
            try:
                out.append([caster(f) for f in fields])
            except ValueError:
                raise MeshFormatError(f"bad {what} entry", line=no)
        return out

    vertices = np.array(parse(vrows, float, "vertex"), dtype=float).reshape(-1, 2)
    tri_rows = np.array(parse(trows, int, "triangle"), dtype=int).reshape(-1, 4)
    triangles, labels = tri_rows[:, :3], tri_rows[:, 3]

    nv = len(vertices)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        raise MeshValidationError("triangle references an unknown vertex index")

    edges = []
    kinds = []
    elabels = []
    for no, fields in erows:
        try:
            i, j = int(fields[0]), int(fields[1])
        except ValueError:
            raise MeshFormatError("bad edge entry", line=no)
        marker = fields[2]
        if marker == "int":
            kinds.append(INTERIOR)
            elabels.append(-1)
        elif marker == "bnd":
            kinds.append(BOUNDARY)
            elabels.append(-1)
        elif marker.startswith("ifc:"):
            try:
                elabels.append(int(marker[4:]))
            except ValueError:
                raise MeshFormatError(f"bad interface marker '{marker}'", line=no)
            kinds.append(INTERFACE)
        else:
            raise MeshFormatError(f"unknown edge marker '{marker}'", line=no)
        if not 0 <= i < nv or not 0 <= j < nv:
            raise MeshValidationError(
                f"edge ({i}, {j}) references an unknown vertex index")
        edges.append((min(i, j), max(i, j)))

    # Cross-check the declared edge list against the triangle-derived one.
    derived, edge_tris, counts = _build_edges(triangles, labels)
    derived_set = {tuple(e): idx for idx, e in enumerate(derived)}
    ne = len(derived)
    kind = np.empty(ne, dtype=int)
    elabel = np.full(ne, -1, dtype=int)
    seen = np.zeros(ne, dtype=bool)
    for (a, b), k, lab in zip(edges, kinds, elabels):
        idx = derived_set.get((a, b))
        if idx is None:
            raise MeshValidationError(
                f"declared edge ({a}, {b}) is not an edge of any triangle "
                f"(hanging node or stale edge list)")
        if seen[idx]:
            raise MeshValidationError(f"edge ({a}, {b}) declared twice")
        seen[idx] = True
        kind[idx] = k
        elabel[idx] = lab
    if not seen.all():
        a, b = derived[int(np.nonzero(~seen)[0][0])]
        raise MeshValidationError(
            f"triangle edge ({a}, {b}) is missing from the edge section")

    mesh = Mesh(vertices, triangles, labels, derived, kind, elabel, edge_tris)
    validate_mesh(mesh)
    return mesh
