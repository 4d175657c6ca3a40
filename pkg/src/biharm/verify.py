"""Fitted-constant drivers for the stability estimates of the method.

Each driver samples random discrete functions on a mesh and returns the
largest observed ratio between the two sides of an inequality.  Running a
driver on a sequence of refined meshes and comparing the constants shows
whether the estimate holds uniformly in the mesh size.
"""
import numpy as np
import scipy.sparse as sp

from .c0ipg import DEFAULT_SIGMA, _jump_sq_integrals, aux_functionals, energy_norm, lifting_tensors
from .femspace import DofMap, FeFunction, face_trace_data, interpolate
from .hct import HctSpace, quasi_interpolate, smooth, smoothing_error_norms


def boundary_lines(mesh, tol=1e-12):
    """Distinct lines (a, b, c) with a x + b y + c = 0 carrying boundary faces."""
    ends = mesh.vertices[mesh.edges[mesh.boundary_faces]]
    d = ends[:, 1] - ends[:, 0]
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / np.linalg.norm(d, axis=1)[:, None]
    # canonical sign: first nonzero component positive
    s = np.where(np.abs(n[:, 0]) > tol, np.sign(n[:, 0]), np.sign(n[:, 1]))
    n *= s[:, None]
    c = -np.einsum("fa,fa->f", n, ends[:, 0])
    lines = np.round(np.column_stack([n, c]), 10)
    return np.unique(lines, axis=0)


def clamped_weight(mesh):
    """Smooth weight vanishing together with its gradient on every boundary line."""
    lines = boundary_lines(mesh)

    def w(x, y):
        out = np.ones(np.broadcast(x, y).shape)
        for a, b, c in lines:
            out = out * (a * x + b * y + c) ** 2
        return out

    return w


def random_smooth(dofmap: DofMap, rng, modes=3):
    """Interpolant of a random low-mode sine series times :func:`clamped_weight`."""
    mesh = dofmap.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    coef = rng.uniform(-1, 1, (modes, modes))
    weight = clamped_weight(mesh)

    def func(x, y):
        sx = [np.sin((i + 1) * np.pi * (x - lo[0]) / (hi[0] - lo[0])) for i in range(modes)]
        sy = [np.sin((j + 1) * np.pi * (y - lo[1]) / (hi[1] - lo[1])) for j in range(modes)]
        series = sum(coef[i, j] * sx[i] * sy[j] for i in range(modes) for j in range(modes))
        return weight(x, y) * series

    return interpolate(dofmap, func)


def patch_faces(mesh):
    """Boolean sparse (ne, nf): faces of the elements sharing a vertex with K."""
    VE = mesh.vertex_element_matrix
    near = (VE.T @ VE) > 0
    ne, nf = mesh.nelements, mesh.nfaces
    EF = sp.csr_matrix((np.ones(3 * ne), (np.repeat(np.arange(ne), 3), mesh.elem_edges.ravel())),
                       shape=(ne, nf))
    return (near.astype(float) @ EF) > 0


def smoothing_ratios(v: FeFunction, space: HctSpace = None, patch=None):
    """max_K ‖D^α(v − Ev)‖²_K / Σ_{F∈F(N(K))} h_F^{3−2α} ∫_F ⟦∂ₙv⟧² for α = 0, 1, 2.

    Elements whose right-hand side vanishes must have a vanishing left-hand
    side; that case is reported as an infinite ratio if violated.
    """
    mesh = v.mesh
    space = HctSpace(mesh) if space is None else space
    patch = patch_faces(mesh) if patch is None else patch
    lhs = smoothing_error_norms(v, smooth(v, space))
    L = mesh.face_lengths
    jsq = _jump_sq_integrals(face_trace_data(v).jump_dn, L)
    out = np.empty(3)
    for a in range(3):
        rhs = patch @ (L ** (3 - 2 * a) * jsq)
        scale = lhs[a].max(initial=0.0)
        zero = rhs <= 1e-14 * max(rhs.max(initial=0.0), 1e-300)
        if np.any(lhs[a][zero] > 1e-20 + 1e-12 * scale):
            out[a] = np.inf
            continue
        out[a] = np.max(lhs[a][~zero] / rhs[~zero], initial=0.0)
    return out


def smoothing_constants(mesh, rng, nsamples=50):
    """Fitted smoothing constants (α = 0, 1, 2) over nodal-noise samples."""
    dofmap = DofMap(mesh)
    space = HctSpace(mesh)
    patch = patch_faces(mesh)
    ratios = [smoothing_ratios(dofmap.random(rng), space, patch) for _ in range(nsamples)]
    return np.max(ratios, axis=0)


def left_inverse_error(mesh, rng, nsamples=5):
    """max over samples of ‖I(E v) − v‖_∞ on the coefficients."""
    dofmap = DofMap(mesh)
    space = HctSpace(mesh)
    err = 0.0
    for _ in range(nsamples):
        v = dofmap.random(rng)
        Iv = quasi_interpolate(smooth(v, space), dofmap, space)
        err = max(err, float(np.abs(Iv.coeffs - v.coeffs).max(initial=0.0)))
    return err


def lifting_ratio(mesh, rng, nsamples=100):
    """max ‖L^F(φ)‖_Ω / ‖h^{-1/2} φ‖_F over faces and random affine φ."""
    best = 0.0
    L = mesh.face_lengths
    for _ in range(nsamples):
        ends = rng.standard_normal((mesh.nfaces, 2))
        integral = 0.5 * L * ends.sum(axis=1)
        elems, T = lifting_tensors(mesh, integral)
        lift_sq = np.einsum("fs,fsab,fsab->f", mesh.area[elems], T, T)
        face_sq = _jump_sq_integrals(ends, L) / L
        best = max(best, float(np.sqrt(lift_sq / face_sq).max()))
    return best


def functional_constants(mesh, rng, nsamples=100, sigma=DEFAULT_SIGMA):
    """Fitted constants of the broken Poincaré, BV and lifting estimates.

    Returns ``{"poincare": max |v|²_H¹/‖v‖²_T, "bv": max tv(v)/‖v‖_T,
    "lifting": ...}`` over smooth random v.
    """
    dofmap = DofMap(mesh)
    pf, bv = 0.0, 0.0
    for _ in range(nsamples):
        v = random_smooth(dofmap, rng)
        nrm = energy_norm(v, sigma).total
        aux = aux_functionals(v)
        pf = max(pf, aux["broken_h1"] / nrm)
        bv = max(bv, aux["tv_grad"] / np.sqrt(nrm))
    return {"poincare": pf, "bv": bv, "lifting": lifting_ratio(mesh, rng, nsamples)}
