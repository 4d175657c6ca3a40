"""Assembly and solution of the C0 interior penalty system for Δ²u = f.

Two independent assembly routes are provided: :func:`assemble` integrates
the face averages of the second normal derivative directly, while
:func:`assemble_lifted` goes through the piecewise constant lifting of the
normal-derivative jumps.  For quadratic elements both produce the same
matrix, which the test suite exploits.
"""
from dataclasses import dataclass
import logging

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .femspace import (DofMap, FeFunction, basis_gradients, basis_hessians, basis_values,
                       face_trace_data)
from .quadrature import edge_rule, triangle_rule

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 20.0


class IndefiniteSystemError(np.linalg.LinAlgError):
    """The C0IP matrix is not positive definite (penalty below the coercivity threshold)."""

    def __init__(self, message, value):
        super().__init__(message)
        self.value = value


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    dofmap: DofMap
    sigma: float


@dataclass
class EnergyNormParts:
    volume: float
    jump: float

    @property
    def total(self):
        return self.volume + self.jump


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"penalty parameter must be positive, got {sigma}")


# ---------------------------------------------------------------------------
# local kernels


def _volume_blocks(mesh):
    H = basis_hessians(mesh.barycentric_gradients)
    return mesh.area[:, None, None] * np.einsum("kiab,kjab->kij", H, H), H


def _face_slots(mesh, dofmap, npoints=3):
    """Normal-derivative jumps and second-derivative averages of all basis functions.

    For every face the 12 slots are the local basis of ``edge_elems[f, 0]``
    followed by that of ``edge_elems[f, 1]`` (zero weight on boundary faces).
    Returns ``(nodes, jumps, means, rule)`` with jumps at Gauss points,
    shape (nf, nq, 12), and means shape (nf, 12).
    """
    rule = edge_rule(npoints)
    n = mesh.face_normals
    e1 = mesh.edge_elems[:, 0]
    e2 = mesh.edge_elems[:, 1]
    inner = e2 >= 0
    k2 = np.where(inner, e2, e1)
    ends = mesh.vertices[mesh.edges]
    pts = ends[:, None, 0] + rule.points[None, :, None] * (ends[:, None, 1] - ends[:, None, 0])
    G = mesh.barycentric_gradients
    H = basis_hessians(G)
    J1 = np.einsum("fqia,fa->fqi", basis_gradients(mesh.barycentric(e1[:, None], pts), G[e1][:, None]), n)
    J2 = -np.einsum("fqia,fa->fqi", basis_gradients(mesh.barycentric(k2[:, None], pts), G[k2][:, None]), n)
    w1 = np.where(inner, 0.5, 1.0)
    M1 = w1[:, None] * np.einsum("fa,fiab,fb->fi", n, H[e1], n)
    M2 = 0.5 * np.einsum("fa,fiab,fb->fi", n, H[k2], n)
    J2[~inner] = 0.0
    M2[~inner] = 0.0
    nodes = np.hstack([dofmap.elem_nodes[e1], dofmap.elem_nodes[k2]])
    return nodes, np.concatenate([J1, J2], axis=2), np.concatenate([M1, M2], axis=1), rule


def _scatter(dofmap, rows, cols, vals):
    n = dofmap.nnodes
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    free = dofmap.free
    return A[free][:, free].tocsr()


def _block_indices(nodes):
    k = nodes.shape[1]
    rows = np.repeat(nodes[:, :, None], k, axis=2)
    cols = np.repeat(nodes[:, None, :], k, axis=1)
    return rows, cols


def _matrix(dofmap, sigma, consistency=True, penalty=True, volume=True):
    mesh = dofmap.mesh
    Kv, _ = _volume_blocks(mesh)
    rows_v, cols_v = _block_indices(dofmap.elem_nodes)
    nodes, J, M, rule = _face_slots(mesh, dofmap)
    L = mesh.face_lengths
    F = np.zeros((mesh.nfaces, 12, 12))
    if consistency:
        Jint = L[:, None] * np.einsum("q,fqi->fi", rule.weights, J)
        C = np.einsum("fi,fj->fij", M, Jint)
        F -= C + np.swapaxes(C, 1, 2)
    if penalty:
        # sigma / h_F * integral over F, with h_F = |F|
        F += sigma * np.einsum("q,fqi,fqj->fij", rule.weights, J, J)
    rows_f, cols_f = _block_indices(nodes)
    parts_r, parts_c, parts_v = [rows_f], [cols_f], [F]
    if volume:
        parts_r.insert(0, rows_v)
        parts_c.insert(0, cols_v)
        parts_v.insert(0, Kv)
    return _scatter(dofmap,
                    np.concatenate([r.ravel() for r in parts_r]),
                    np.concatenate([c.ravel() for c in parts_c]),
                    np.concatenate([v.ravel() for v in parts_v]))


def load_vector(dofmap, f, quad_degree=8):
    """b_i = ∫ f φ_i with a triangle rule of the given degree."""
    mesh = dofmap.mesh
    rule = triangle_rule(quad_degree)
    xq = np.einsum("qi,kia->kqa", rule.points, mesh.vertices[mesh.elements])
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
    fq = np.broadcast_to(fq, xq.shape[:2])
    phi = basis_values(rule.points)
    loc = mesh.area[:, None] * np.einsum("q,kq,qi->ki", rule.weights, fq, phi)
    full = np.bincount(dofmap.elem_nodes.ravel(), weights=loc.ravel(), minlength=dofmap.nnodes)
    return full[dofmap.free]


def assemble(dofmap: DofMap, sigma=DEFAULT_SIGMA, f=None, quad_degree=8) -> LinearSystem:
    """Matrix of the C0IP bilinear form on the free nodes and the load vector for ``f``."""
    _check_sigma(sigma)
    A = _matrix(dofmap, sigma)
    b = np.zeros(dofmap.dim) if f is None else load_vector(dofmap, f, quad_degree)
    return LinearSystem(A, b, dofmap, float(sigma))


def energy_gram(dofmap: DofMap, sigma=DEFAULT_SIGMA):
    """Gram matrix of the energy inner product (form without consistency terms)."""
    _check_sigma(sigma)
    return _matrix(dofmap, sigma, consistency=False)


# ---------------------------------------------------------------------------
# liftings


def lifting(mesh, face, phi_integral):
    """Piecewise constant lifting of a face function.

    ``phi_integral`` is ``∫_F φ ds`` (the only information a P0 lifting
    retains).  Returns a dict element id -> symmetric 2x2 tensor supported
    on the elements sharing ``face``.
    """
    n = mesh.face_normals[face]
    e1, e2 = mesh.edge_elems[face]
    nn = np.outer(n, n)
    if e2 < 0:
        return {int(e1): phi_integral / mesh.area[e1] * nn}
    return {int(k): 0.5 * phi_integral / mesh.area[k] * nn for k in (e1, e2)}


def lifting_tensors(mesh, phi_integrals):
    """Vectorised :func:`lifting` for one value per face.

    Returns ``(elems, tensors)`` with shapes (nf, 2) and (nf, 2, 2, 2);
    entries for the missing neighbour of boundary faces are zero.
    """
    n = mesh.face_normals
    e1, e2 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    inner = e2 >= 0
    k2 = np.where(inner, e2, e1)
    nn = np.einsum("fa,fb->fab", n, n)
    w1 = np.where(inner, 0.5, 1.0)
    w2 = np.where(inner, 0.5, 0.0)
    T1 = (w1 * phi_integrals / mesh.area[e1])[:, None, None] * nn
    T2 = (w2 * phi_integrals / mesh.area[k2])[:, None, None] * nn
    return np.stack([e1, k2], axis=1), np.stack([T1, T2], axis=1)


def assemble_lifted(dofmap: DofMap, sigma=DEFAULT_SIGMA):
    """Matrix of the lifted bilinear form.

    The consistency term is ∫ L(⟦∂ₙw⟧):D²v + L(⟦∂ₙv⟧):D²w, where every
    basis jump is lifted to elementwise constant tensors.
    """
    _check_sigma(sigma)
    mesh = dofmap.mesh
    Kv, H = _volume_blocks(mesh)
    nodes, J, _, rule = _face_slots(mesh, dofmap)
    L = mesh.face_lengths
    e1, e2 = mesh.edge_elems[:, 0], mesh.edge_elems[:, 1]
    inner = e2 >= 0
    k2 = np.where(inner, e2, e1)
    nn = np.einsum("fa,fb->fab", mesh.face_normals, mesh.face_normals)
    jump_int = L[:, None] * np.einsum("q,fqj->fj", rule.weights, J)  # (nf, 12)
    rows, cols, vals = [], [], []
    for side, (elem, weight) in enumerate(((e1, np.where(inner, 0.5, 1.0)),
                                           (k2, np.where(inner, 0.5, 0.0)))):
        # L^F(⟦∂ₙφ_j⟧) on this element: weight/|K| * jump_int_j * n⊗n
        lift = (weight / mesh.area[elem])[:, None, None, None] * jump_int[:, :, None, None] * nn[:, None]
        # ∫_K L:D²φ_i = |K| L:H_i
        C = -mesh.area[elem][:, None, None] * np.einsum("fiab,fjab->fij", H[elem], lift)
        r = np.repeat(dofmap.elem_nodes[elem][:, :, None], 12, axis=2)
        c = np.repeat(nodes[:, None, :], 6, axis=1)
        rows += [r, c]
        cols += [c, r]
        vals += [C, C]
    P = sigma * np.einsum("q,fqi,fqj->fij", rule.weights, J, J)
    rp, cp = _block_indices(nodes)
    rv, cv = _block_indices(dofmap.elem_nodes)
    rows += [rv, rp]
    cols += [cv, cp]
    vals += [Kv, P]
    return _scatter(dofmap,
                    np.concatenate([r.ravel() for r in rows]),
                    np.concatenate([c.ravel() for c in cols]),
                    np.concatenate([v.ravel() for v in vals]))


# ---------------------------------------------------------------------------
# norms and functionals


def _jump_sq_integrals(jump_dn, lengths):
    """∫_F j² for affine j with endpoint values ``jump_dn`` (nf, 2)."""
    a, b = jump_dn[:, 0], jump_dn[:, 1]
    return lengths * (a * a + a * b + b * b) / 3.0


def energy_norm(fn: FeFunction, sigma=DEFAULT_SIGMA) -> EnergyNormParts:
    """Squared energy norm split into its volume and jump parts."""
    _check_sigma(sigma)
    mesh = fn.mesh
    vol = float(np.sum(mesh.area * np.einsum("kab,kab->k", fn.hessians, fn.hessians)))
    tr = face_trace_data(fn)
    jump = float(sigma * np.sum(_jump_sq_integrals(tr.jump_dn, mesh.face_lengths) / mesh.face_lengths))
    return EnergyNormParts(vol, jump)


def energy_error(fn: FeFunction, exact_hessian, sigma=DEFAULT_SIGMA, quad_degree=10):
    """Squared energy norm of u - fn for an exact solution u in H²₀ with Hessian callable.

    ``exact_hessian(x, y)`` returns an array (..., 2, 2).  The jump part only
    involves fn since u is C¹ with vanishing normal derivative on ∂Ω.
    """
    mesh = fn.mesh
    rule = triangle_rule(quad_degree)
    xq = np.einsum("qi,kia->kqa", rule.points, mesh.vertices[mesh.elements])
    D = np.asarray(exact_hessian(xq[..., 0], xq[..., 1])) - fn.hessians[:, None]
    vol = float(np.sum(mesh.area * np.einsum("q,kqab,kqab->k", rule.weights, D, D)))
    tr = face_trace_data(fn)
    jump = float(sigma * np.sum(_jump_sq_integrals(tr.jump_dn, mesh.face_lengths) / mesh.face_lengths))
    return EnergyNormParts(vol, jump)


def _abs_affine_integrals(jump_dn, lengths):
    a, b = jump_dn[:, 0], jump_dn[:, 1]
    same = a * b >= 0
    out = np.empty_like(a)
    out[same] = 0.5 * lengths[same] * np.abs(a[same] + b[same])
    d = ~same
    out[d] = 0.5 * lengths[d] * (a[d] ** 2 + b[d] ** 2) / (np.abs(a[d]) + np.abs(b[d]))
    return out


def aux_functionals(fn: FeFunction):
    """Broken H¹ seminorm squared and the gradient total-variation bound.

    Returns ``{"broken_h1": ∫|∇v|², "tv_grad": ∫|D²v| + ∫_Γ|⟦∂ₙv⟧|}`` with the
    Frobenius norm for |D²v|.
    """
    mesh = fn.mesh
    rule = triangle_rule(2)
    elems = np.arange(mesh.nelements)[:, None]
    g = fn.gradients_at(elems, np.broadcast_to(rule.points, (mesh.nelements,) + rule.points.shape))
    h1 = float(np.sum(mesh.area * np.einsum("q,kqa,kqa->k", rule.weights, g, g)))
    tr = face_trace_data(fn)
    tv = float(np.sum(mesh.area * np.linalg.norm(fn.hessians, axis=(1, 2)))
               + np.sum(_abs_affine_integrals(tr.jump_dn, mesh.face_lengths)))
    return {"broken_h1": h1, "tv_grad": tv}


def bilinear(A, v: FeFunction, w: FeFunction):
    return float(v.coeffs @ (A @ w.coeffs))


# ---------------------------------------------------------------------------
# solvers


def _ldl_factor(A):
    """Sparse LU without row pivoting; for symmetric A its pivots give the inertia."""
    lu = spla.splu(A.tocsc(), permc_spec="COLAMD", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return lu, None
    return lu, lu.U.diagonal()


def smallest_pivot(A):
    """Smallest pivot of a symmetric factorisation (its sign decides definiteness)."""
    if A.shape[0] == 0:
        return np.inf
    lu, piv = _ldl_factor(A)
    if piv is None:
        return float(spla.eigsh(A, k=1, which="SA", return_eigenvectors=False)[0])
    return float(piv.min())


def _cg(A, b, tol, maxiter):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    bnorm = np.linalg.norm(b)
    for it in range(maxiter):
        if np.sqrt(rr) <= tol * bnorm:
            return x, it
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise IndefiniteSystemError(
                f"CG detected nonpositive curvature (Rayleigh quotient {pAp / (p @ p):.3e}); "
                "the penalty parameter is likely below the coercivity threshold", pAp / (p @ p))
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise np.linalg.LinAlgError(f"CG did not converge in {maxiter} iterations")


def solve(system: LinearSystem, method="direct", tol=1e-10) -> FeFunction:
    """Solve the SPD C0IP system; raise :class:`IndefiniteSystemError` otherwise."""
    A, b = system.A, system.b
    n = len(b)
    if n == 0:
        return FeFunction(system.dofmap, np.zeros(0))
    if not np.any(b):
        return FeFunction(system.dofmap, np.zeros(n))
    if method == "cg":
        x, _ = _cg(A, b, tol, 10 * n)
        return FeFunction(system.dofmap, x)
    if method != "direct":
        raise ValueError(f"unknown solver method {method!r}")
    lu, piv = _ldl_factor(A)
    if piv is None:
        pmin = float(spla.eigsh(A, k=1, which="SA", return_eigenvectors=False)[0])
    else:
        pmin = float(piv.min())
    if pmin <= 0:
        raise IndefiniteSystemError(
            f"system matrix is not positive definite (smallest pivot {pmin:.6e}, sigma="
            f"{system.sigma}); increase the penalty parameter", pmin)
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= tol * bnorm:
            break
        x += lu.solve(r)
    res = np.linalg.norm(b - A @ x) / bnorm
    if res > tol:
        log.debug("relative residual %.3e exceeds %.1e", res, tol)
    return FeFunction(system.dofmap, x)


def relative_residual(system: LinearSystem, u: FeFunction):
    bnorm = np.linalg.norm(system.b)
    r = np.linalg.norm(system.b - system.A @ u.coeffs)
    return r / bnorm if bnorm else r


# ---------------------------------------------------------------------------
# coercivity diagnostics


def generalized_extremes(dofmap: DofMap, sigma=DEFAULT_SIGMA):
    """Smallest and largest λ of A x = λ M_E x (dense; meant for small meshes)."""
    A = _matrix(dofmap, sigma).toarray()
    M = energy_gram(dofmap, sigma).toarray()
    lam = sla.eigh(A, M, eigvals_only=True)
    return float(lam[0]), float(lam[-1])


def sigma_star(mesh, lo=0.5, hi=40.0, rtol=1e-6):
    """Smallest penalty (within [lo, hi]) for which the C0IP matrix is SPD on ``mesh``.

    Bisection on the sign of the smallest pivot.  Returns ``lo`` if the
    matrix is already SPD there and raises ValueError if it is not SPD at ``hi``.
    """
    dofmap = DofMap(mesh)
    V = _matrix(dofmap, 1.0, penalty=False)
    P = _matrix(dofmap, 1.0, consistency=False, volume=False)

    def spd(s):
        return smallest_pivot((V + s * P).tocsr()) > 0

    if not spd(hi):
        raise ValueError(f"matrix is not SPD even for sigma={hi}")
    if spd(lo):
        return lo
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if spd(mid) else (mid, hi)
    return hi


def export_matrix(A, path):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(path, sp.coo_matrix(A))
