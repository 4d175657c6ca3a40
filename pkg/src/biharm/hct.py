"""Quartic Hsieh-Clough-Tocher macro elements, the H²₀ smoothing operator
and the dual-basis quasi-interpolation back onto V(T).

A macro triangle (v0, v1, v2) with barycenter b is split into the
subtriangles ``S_k = (b, v_k, v_{k+1})``; ``S_k`` carries local edge ``k``.
Each piece is a quartic written in monomials of ``((x, y) - b) / s`` with
``s`` the element diameter.

Local degrees of freedom (21):

====== =====================================================
0-8    value, d/dx, d/dy at v0, v1, v2
9-11   value at the midpoints of edges 0, 1, 2
12-17  normal derivative at two points of edges 0, 1, 2
18-20  value, d/dx, d/dy at the barycenter
====== =====================================================

The two edge points sit at parameters 1/3 and 2/3 measured from the edge
endpoint with the lower global vertex index, and the normal is the mesh
face normal, so neighbouring elements share these functionals.
"""
from functools import cached_property

import numpy as np

from .femspace import DofMap, FeFunction
from .mesh import Mesh
from .quadrature import edge_rule, triangle_rule

EDGE_PARAMS = (1.0 / 3.0, 2.0 / 3.0)
EXPONENTS = np.array([(i, d - i) for d in range(5) for i in range(d, -1, -1)])
NMONO = len(EXPONENTS)  # 15


class HctConstructionError(np.linalg.LinAlgError):
    pass


def monomials(xi, deriv=(0, 0)):
    """Scaled-coordinate monomials or their derivatives at ``xi`` (..., 2) -> (..., 15)."""
    ex, ey = EXPONENTS[:, 0].copy(), EXPONENTS[:, 1].copy()
    coef = np.ones(NMONO)
    for _ in range(deriv[0]):
        coef *= ex
        ex -= 1
    for _ in range(deriv[1]):
        coef *= ey
        ey -= 1
    # coef vanishes wherever an exponent went negative
    x, y = xi[..., 0, None], xi[..., 1, None]
    ones = np.ones_like(x)
    xp = np.concatenate([ones, np.cumprod(np.repeat(x, 4, axis=-1), axis=-1)], axis=-1)
    yp = np.concatenate([ones, np.cumprod(np.repeat(y, 4, axis=-1), axis=-1)], axis=-1)
    return coef * xp[..., np.maximum(ex, 0)] * yp[..., np.maximum(ey, 0)]


def _rows(xi, scale, kind, direction=None):
    """Rows mapping monomial coefficients to a point functional."""
    if kind == "value":
        return monomials(xi)
    gx = monomials(xi, (1, 0)) / scale[..., None]
    gy = monomials(xi, (0, 1)) / scale[..., None]
    if kind == "dx":
        return gx
    if kind == "dy":
        return gy
    return direction[..., 0, None] * gx + direction[..., 1, None] * gy


class HctElements:
    """Nodal HCT bases for a batch of macro triangles.

    Parameters
    ----------
    vertices : array, shape (n, 3, 2)
        Counter-clockwise macro triangles.
    normals : array, shape (n, 3, 2), optional
        Normal used by the normal-derivative DOFs of each local edge;
        defaults to the outward unit normals.
    flip : bool array, shape (n, 3), optional
        Measure the edge points from v_{k+1} instead of v_k.
    """

    def __init__(self, vertices, normals=None, flip=None, tol=1e-8):
        V = np.asarray(vertices, dtype=float)
        if V.ndim == 2:
            V = V[None]
        n = len(V)
        self.vertices = V
        self.barycenter = V.mean(axis=1)
        d = V[:, [1, 2, 0]] - V
        self.scale = np.linalg.norm(d, axis=2).max(axis=1)
        if normals is None:
            normals = np.stack([d[..., 1], -d[..., 0]], axis=-1) / np.linalg.norm(d, axis=2)[..., None]
        self.normals = np.asarray(normals, dtype=float).reshape(n, 3, 2)
        self.flip = np.zeros((n, 3), dtype=bool) if flip is None else np.asarray(flip).reshape(n, 3)
        area = 0.5 * (d[:, 0, 0] * (V[:, 2, 1] - V[:, 0, 1]) - d[:, 0, 1] * (V[:, 2, 0] - V[:, 0, 0]))
        if np.any(area <= 0):
            raise HctConstructionError("macro triangle must be nondegenerate and counter-clockwise")
        self.area = area
        self.coeffs = self._construct(tol)

    def __len__(self):
        return len(self.vertices)

    def local(self, points):
        """Scaled local coordinates of physical ``points`` (n, ..., 2)."""
        shape = (len(self),) + (1,) * (points.ndim - 2) + (2,)
        return (points - self.barycenter.reshape(shape)) / self.scale.reshape(shape[:-1] + (1,))

    def subtriangles(self):
        """Vertices of the three subtriangles, shape (n, 3, 3, 2)."""
        V = self.vertices
        b = np.broadcast_to(self.barycenter[:, None], V.shape)
        return np.stack([b, V, V[:, [1, 2, 0]]], axis=2)

    def edge_points(self):
        """Midpoints (n, 3, 2) and normal-derivative points (n, 3, 2, 2)."""
        V = self.vertices
        p, q = V, V[:, [1, 2, 0]]
        start = np.where(self.flip[..., None], q, p)
        end = np.where(self.flip[..., None], p, q)
        pts = np.stack([start + t * (end - start) for t in EDGE_PARAMS], axis=2)
        return 0.5 * (p + q), pts

    def dof_matrix(self):
        """Functionals applied to the 45 piecewise monomials, shape (n, 21, 45)."""
        n = len(self)
        s = self.scale
        D = np.zeros((n, 21, 3, NMONO))
        V = self.vertices
        loc = self.local
        for k in range(3):
            xi = loc(V[:, k][:, None])[:, 0]
            for j, kind in enumerate(("value", "dx", "dy")):
                D[:, 3 * k + j, k] = _rows(xi, s, kind)
        mid, pts = self.edge_points()
        for k in range(3):
            D[:, 9 + k, k] = _rows(loc(mid[:, k][:, None])[:, 0], s, "value")
            for j in range(2):
                xi = loc(pts[:, k, j][:, None])[:, 0]
                D[:, 12 + 2 * k + j, k] = _rows(xi, s, "dn", self.normals[:, k])
        xb = np.zeros((n, 2))
        for j, kind in enumerate(("value", "dx", "dy")):
            D[:, 18 + j, 0] = _rows(xb, s, kind)
        return D.reshape(n, 21, 3 * NMONO)

    def continuity_matrix(self):
        """C¹ matching across the three interior subedges, shape (n, 27, 45)."""
        n = len(self)
        s = self.scale
        C = np.zeros((n, 27, 3, NMONO))
        V = self.vertices
        b = self.barycenter
        row = 0
        for k in range(3):
            left, right = (k - 1) % 3, k  # S_{k-1} and S_k share the segment b -> v_k
            d = V[:, k] - b
            nrm = np.stack([d[:, 1], -d[:, 0]], axis=-1) / np.linalg.norm(d, axis=1)[:, None]
            for t in np.linspace(0.0, 1.0, 5):
                xi = self.local((b + t * d)[:, None])[:, 0]
                r = _rows(xi, s, "value")
                C[:, row, right] = r
                C[:, row, left] = -r
                row += 1
            for t in np.linspace(0.0, 1.0, 4):
                xi = self.local((b + t * d)[:, None])[:, 0]
                r = _rows(xi, s, "dn", nrm)
                C[:, row, right] = r
                C[:, row, left] = -r
                row += 1
        return C.reshape(n, 27, 3 * NMONO)

    def _construct(self, tol):
        C = self.continuity_matrix()
        _, sv, Vt = np.linalg.svd(C)
        rel = sv / sv[:, :1]
        rank = (rel > 1e-10).sum(axis=1)
        if np.any(rank != 24):
            bad = int(np.flatnonzero(rank != 24)[0])
            raise HctConstructionError(
                f"C1 constraint rank {rank[bad]} != 24 on element {bad}")
        N = np.swapaxes(Vt[:, 24:], 1, 2)  # (n, 45, 21) null-space basis
        DN = self.dof_matrix() @ N
        cond = np.linalg.cond(DN)
        if np.any(cond > 1e12):
            raise HctConstructionError(
                f"degrees of freedom are not unisolvent (condition number {cond.max():.3e})")
        B = N @ np.linalg.inv(DN)  # columns are nodal basis functions
        resid = np.abs(self.dof_matrix() @ B - np.eye(21)).max()
        if resid > tol:
            raise HctConstructionError(f"unisolvence residual {resid:.3e} exceeds {tol}")
        self.constraint_rank = rank
        return B.reshape(len(self), 3, NMONO, 21)

    # -- evaluation -----------------------------------------------------

    def locate(self, points):
        """Subtriangle index of points (n, m, 2) within their macro elements."""
        V = self.vertices
        lam = np.empty(points.shape[:-1] + (3,))
        for i in range(3):
            q, r = V[:, (i + 1) % 3], V[:, (i + 2) % 3]
            nrm = np.stack([q[:, 1] - r[:, 1], r[:, 0] - q[:, 0]], axis=-1) / (2 * self.area)[:, None]
            lam[..., i] = np.einsum("nmk,nk->nm", points - r[:, None], nrm)
        # S_k is where the vertex opposite edge k has the smallest coordinate
        return (np.argmin(lam, axis=-1) + 1) % 3

    def evaluate(self, local_dofs, points, deriv=(0, 0), sub=None):
        """Evaluate functions given by local DOFs (n, 21) at points (n, m, 2)."""
        if sub is None:
            sub = self.locate(points)
        piece = np.einsum("nsmj,nj->nsm", self.coeffs, local_dofs)  # (n, 3, 15)
        c = np.take_along_axis(piece[:, None], sub[..., None, None], axis=2)[:, :, 0]
        order = sum(deriv)
        mono = monomials(self.local(points), deriv) / self.scale[:, None, None] ** order
        return np.einsum("nmj,nmj->nm", mono, c)

    def basis_at(self, points, sub, deriv=(0, 0)):
        """All 21 basis functions at points (n, m, 2) of known subtriangles -> (n, m, 21)."""
        order = sum(deriv)
        mono = monomials(self.local(points), deriv) / self.scale[:, None, None] ** order
        B = np.take_along_axis(self.coeffs[:, None], sub[..., None, None, None], axis=2)[:, :, 0]
        return np.einsum("nmj,nmjd->nmd", mono, B)

    def sub_quadrature(self, degree=8):
        """Points (n, 3*nq, 2), weights (n, 3*nq) and subtriangle ids over all subtriangles."""
        rule = triangle_rule(degree)
        S = self.subtriangles()
        pts = np.einsum("qi,nsia->nsqa", rule.points, S)
        w = (self.area / 3.0)[:, None, None] * rule.weights[None, None]
        w = np.broadcast_to(w, pts.shape[:-1])
        sub = np.broadcast_to(np.arange(3)[None, :, None], pts.shape[:-1])
        nq = len(rule)
        return pts.reshape(len(self), 3 * nq, 2), w.reshape(len(self), 3 * nq), sub.reshape(len(self), 3 * nq)

    @cached_property
    def mass(self):
        """L² Gram matrices of the nodal bases, shape (n, 21, 21)."""
        pts, w, sub = self.sub_quadrature(8)
        phi = self.basis_at(pts, sub)
        return np.einsum("nq,nqi,nqj->nij", w, phi, phi)

    @cached_property
    def dual(self):
        """Coefficients of the L²-dual basis in the nodal basis (inverse Gram)."""
        return np.linalg.inv(self.mass)


def build_hct(vertices, normals=None, flip=None):
    """HCT macro element on a single triangle."""
    return HctElements(np.asarray(vertices, dtype=float)[None], normals, flip)


# ---------------------------------------------------------------------------
# global space on a mesh


class HctSpace:
    """Global C¹ HCT space on a mesh with shared vertex/edge DOFs.

    Global numbering: ``3 v + {0,1,2}`` for vertex value and gradient,
    ``3 nv + 3 f + {0,1,2}`` for face midpoint value and the two normal
    derivatives, ``3 nv + 3 nf + 3 K + {0,1,2}`` for the barycenter.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        t = mesh.elements
        E = mesh.elem_edges
        nv, nf = mesh.nvertices, mesh.nfaces
        self.ndofs = 3 * (nv + nf + mesh.nelements)
        normals = mesh.face_normals[E]
        flip = mesh.edges[E, 0] != t
        self.elements = HctElements(mesh.vertices[t], normals, flip)
        l2g = np.empty((mesh.nelements, 21), dtype=np.int64)
        l2g[:, 0:9] = (3 * t[:, :, None] + np.arange(3)).reshape(-1, 9)
        l2g[:, 9:12] = 3 * nv + 3 * E
        l2g[:, 12:18] = (3 * nv + 3 * E[:, :, None] + np.array([1, 2])).reshape(-1, 6)
        l2g[:, 18:21] = 3 * (nv + nf) + 3 * np.arange(mesh.nelements)[:, None] + np.arange(3)
        self.l2g = l2g
        bnd = np.zeros(self.ndofs, dtype=bool)
        bv = np.flatnonzero(mesh.boundary_vertices)
        bnd[(3 * bv[:, None] + np.arange(3)).ravel()] = True
        bf = np.flatnonzero(mesh.boundary_faces)
        bnd[(3 * nv + 3 * bf[:, None] + np.arange(3)).ravel()] = True
        self.boundary = bnd


class HctFunction:
    """Element of the global HCT space given by its global DOF vector."""

    def __init__(self, space: HctSpace, dofs):
        self.space = space
        self.dofs = np.asarray(dofs, dtype=float)

    @property
    def mesh(self):
        return self.space.mesh

    @cached_property
    def local(self):
        return self.dofs[self.space.l2g]

    def evaluate(self, elems, points, deriv=(0, 0)):
        """Values of the restriction to ``elems`` (n,) at ``points`` (n, m, 2)."""
        el = self.space.elements
        sub_el = _subset(el, elems)
        return sub_el.evaluate(self.local[elems], points, deriv)

    def gradient(self, elems, points):
        return np.stack([self.evaluate(elems, points, (1, 0)),
                         self.evaluate(elems, points, (0, 1))], axis=-1)


def _subset(el: HctElements, elems):
    """Lightweight view of a batch restricted to ``elems``."""
    if len(elems) == len(el) and np.array_equal(elems, np.arange(len(el))):
        return el
    view = HctElements.__new__(HctElements)
    for name in ("vertices", "barycenter", "scale", "normals", "flip", "area", "coeffs"):
        setattr(view, name, getattr(el, name)[elems])
    return view


# ---------------------------------------------------------------------------
# smoothing operator


def p2_local_dofs(v: FeFunction, space: HctSpace):
    """HCT functionals applied to every restriction v|_K, shape (ne, 21)."""
    mesh = v.mesh
    el = space.elements
    ne = mesh.nelements
    loc = np.empty((ne, 21))
    loc[:, 0:9:3] = v.local[:, :3]
    vg = v.vertex_gradients()
    loc[:, 1:9:3] = vg[..., 0]
    loc[:, 2:9:3] = vg[..., 1]
    loc[:, 9:12] = v.local[:, 3:6]
    elems = np.arange(ne)[:, None]
    _, pts = el.edge_points()
    pts = pts.reshape(ne, 6, 2)
    g = v.gradients_at(elems, mesh.barycentric(elems, pts))
    nrm = np.repeat(el.normals, 2, axis=1)
    loc[:, 12:18] = np.einsum("nma,nma->nm", g, nrm)
    lam_b = np.full((ne, 1, 3), 1.0 / 3.0)
    loc[:, 18] = v.values_at(elems, lam_b)[:, 0]
    loc[:, 19:21] = v.gradients_at(elems, lam_b)[:, 0]
    return loc


def smooth(v: FeFunction, space: HctSpace = None) -> HctFunction:
    """Area-weighted DOF averaging of v into the HCT space, zero DOFs on ∂Ω."""
    if space is None:
        space = HctSpace(v.mesh)
    area = v.mesh.area
    loc = p2_local_dofs(v, space)
    w = np.broadcast_to(area[:, None], loc.shape)
    num = np.bincount(space.l2g.ravel(), (w * loc).ravel(), space.ndofs)
    den = np.bincount(space.l2g.ravel(), w.ravel(), space.ndofs)
    dofs = num / den
    dofs[space.boundary] = 0.0
    return HctFunction(space, dofs)


# ---------------------------------------------------------------------------
# quasi-interpolation


_LAGRANGE_LOCAL = np.array([0, 3, 6, 9, 10, 11])  # HCT value DOFs at the P2 nodes


def _pairings_fe(w: FeFunction, el: HctElements, coarse: Mesh):
    """∫_K φ_j w for a P2 function on ``coarse`` or on a nested refinement of it."""
    fine = w.mesh
    if fine is coarse:
        pts, wt, sub = el.sub_quadrature(8)
        elems = np.arange(coarse.nelements)[:, None]
        vals = w.values_at(elems, coarse.barycentric(elems, pts))
        return np.einsum("nq,nq,nqj->nj", wt, vals, el.basis_at(pts, sub))
    anc = fine.ancestors_in(coarse)
    S = el.subtriangles()
    rule = triangle_rule(8)
    out = np.zeros((coarse.nelements, 21))
    FV = fine.vertices[fine.elements]
    for e in range(fine.nelements):
        K = anc[e]
        for s in range(3):
            poly = _clip(FV[e], S[K, s])
            if len(poly) < 3:
                continue
            for a, b in zip(poly[1:-1], poly[2:]):
                tri = np.array([poly[0], a, b])
                ar = 0.5 * abs((a[0] - poly[0][0]) * (b[1] - poly[0][1]) - (a[1] - poly[0][1]) * (b[0] - poly[0][0]))
                if ar <= 0:
                    continue
                x = rule.points @ tri
                vals = w.values_at(e, fine.barycentric(e, x))
                phi = _subset(el, [K]).basis_at(x[None], np.full((1, len(x)), s))[0]
                out[K] += ar * np.einsum("q,q,qj->j", rule.weights, vals, phi)
    return out


def _clip(subject, clipper):
    """Sutherland-Hodgman clipping of a triangle by a counter-clockwise triangle."""
    poly = [np.asarray(p, dtype=float) for p in subject]
    for i in range(3):
        a, b = clipper[i], clipper[(i + 1) % 3]
        d = b - a
        scale = np.linalg.norm(d)

        def side(p):
            return (d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])) / scale

        out = []
        for j in range(len(poly)):
            p, q = poly[j], poly[(j + 1) % len(poly)]
            sp_, sq = side(p), side(q)
            if sp_ >= -1e-14:
                out.append(p)
            if (sp_ > 1e-14 and sq < -1e-14) or (sp_ < -1e-14 and sq > 1e-14):
                out.append(p + sp_ / (sp_ - sq) * (q - p))
        poly = out
        if not poly:
            break
    return poly


def quasi_interpolate(w, dofmap: DofMap, space: HctSpace = None, quad_degree=8) -> FeFunction:
    """Dual-basis quasi-interpolant of ``w`` in V(T).

    ``w`` may be an :class:`HctFunction` or :class:`FeFunction` (on the same
    mesh or a nested refinement of it) or a callable ``w(x, y)``.  A callable
    may declare a polynomial ``degree`` attribute; it is rejected if the
    quadrature cannot integrate it against the quartic basis exactly.
    """
    mesh = dofmap.mesh
    if space is None:
        space = HctSpace(mesh)
    el = space.elements
    if isinstance(w, HctFunction):
        if w.mesh is not mesh:
            raise ValueError("HctFunction must live on the target mesh")
        pts, wt, sub = el.sub_quadrature(8)
        vals = w.space.elements.evaluate(w.local, pts, sub=sub)
        m = np.einsum("nq,nq,nqj->nj", wt, vals, el.basis_at(pts, sub))
    elif isinstance(w, FeFunction):
        m = _pairings_fe(w, el, mesh)
    else:
        deg = getattr(w, "degree", None)
        if deg is not None and deg + 4 > quad_degree:
            raise ValueError(f"quadrature degree {quad_degree} cannot integrate a degree-{deg} "
                             "function against the quartic dual basis")
        pts, wt, sub = el.sub_quadrature(quad_degree)
        vals = np.asarray(w(pts[..., 0], pts[..., 1]), dtype=float)
        m = np.einsum("nq,nq,nqj->nj", wt, vals, el.basis_at(pts, sub))
    pair = np.einsum("nij,nj->ni", el.dual[:, _LAGRANGE_LOCAL], m)  # (ne, 6)
    area = mesh.area
    nodes = dofmap.elem_nodes
    num = np.bincount(nodes.ravel(), (area[:, None] * pair).ravel(), dofmap.nnodes)
    den = np.bincount(nodes.ravel(), np.repeat(area, 6), dofmap.nnodes)
    return FeFunction(dofmap, (num / den)[dofmap.free])


# ---------------------------------------------------------------------------
# diagnostics


def conformity_residuals(F: HctFunction, npoints=5):
    """Largest inter-element jumps of value and gradient on interior faces
    and largest value/gradient on boundary faces, sampled at Gauss points."""
    mesh = F.mesh
    rule = edge_rule(npoints)
    ends = mesh.vertices[mesh.edges]
    pts = ends[:, None, 0] + rule.points[None, :, None] * (ends[:, None, 1] - ends[:, None, 0])
    e1, e2 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    v1, g1 = F.evaluate(e1, pts), F.gradient(e1, pts)
    inner = e2 >= 0
    k2 = e2[inner]
    v2, g2 = F.evaluate(k2, pts[inner]), F.gradient(k2, pts[inner])
    out = {
        "value_jump": float(np.abs(v1[inner] - v2).max(initial=0.0)),
        "gradient_jump": float(np.abs(g1[inner] - g2).max(initial=0.0)),
        "boundary_value": float(np.abs(v1[~inner]).max(initial=0.0)),
        "boundary_gradient": float(np.abs(g1[~inner]).max(initial=0.0)),
    }
    return out


def smoothing_error_norms(v: FeFunction, Ev: HctFunction):
    """‖D^α(v − Ev)‖²_K for α = 0, 1, 2, shape (3, ne)."""
    mesh = v.mesh
    el = Ev.space.elements
    pts, wt, sub = el.sub_quadrature(8)
    elems = np.arange(mesh.nelements)[:, None]
    lam = mesh.barycentric(elems, pts)
    loc = Ev.local
    d0 = v.values_at(elems, lam) - el.evaluate(loc, pts, sub=sub)
    gv = v.gradients_at(elems, lam)
    d1 = [gv[..., 0] - el.evaluate(loc, pts, (1, 0), sub), gv[..., 1] - el.evaluate(loc, pts, (0, 1), sub)]
    H = v.hessians
    d2 = [H[:, None, 0, 0] - el.evaluate(loc, pts, (2, 0), sub),
          H[:, None, 0, 1] - el.evaluate(loc, pts, (1, 1), sub),
          H[:, None, 1, 1] - el.evaluate(loc, pts, (0, 2), sub)]
    n0 = np.einsum("nq,nq->n", wt, d0 ** 2)
    n1 = np.einsum("nq,nq->n", wt, d1[0] ** 2 + d1[1] ** 2)
    n2 = np.einsum("nq,nq->n", wt, d2[0] ** 2 + 2 * d2[1] ** 2 + d2[2] ** 2)
    return np.stack([n0, n1, n2])
