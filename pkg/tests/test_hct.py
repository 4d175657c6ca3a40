import numpy as np
import pytest

from biharm.femspace import DofMap, FeFunction, interpolate
from biharm.hct import (
    EXPONENTS, HctConstructionError, HctFunction, HctSpace, build_hct, conformity_residuals,
    monomials, quasi_interpolate, smooth, smoothing_error_norms,
)
from biharm.mesh import lshape, refine, uniform_refine, unit_square

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _quartic(coef):
    """Value and first derivatives of Σ c_k x^i y^j."""
    i, j = EXPONENTS[:, 0], EXPONENTS[:, 1]

    def value(p):
        return np.sum(coef * p[..., 0, None] ** i * p[..., 1, None] ** j, axis=-1)

    def grad(p):
        x, y = p[..., 0, None], p[..., 1, None]
        dx = np.sum(coef * i * x ** np.maximum(i - 1, 0) * y ** j, axis=-1)
        dy = np.sum(coef * j * x ** i * y ** np.maximum(j - 1, 0), axis=-1)
        return np.stack([dx, dy], axis=-1)

    return value, grad


def _interpolate_local(el, value, grad):
    """Apply the 21 HCT functionals of a one-element batch to a smooth function."""
    V = el.vertices[0]
    dofs = np.empty(21)
    for k in range(3):
        dofs[3 * k] = value(V[k])
        dofs[3 * k + 1: 3 * k + 3] = grad(V[k])
    mid, pts = el.edge_points()
    for k in range(3):
        dofs[9 + k] = value(mid[0, k])
        for j in range(2):
            dofs[12 + 2 * k + j] = grad(pts[0, k, j]) @ el.normals[0, k]
    b = el.barycenter[0]
    dofs[18], dofs[19:21] = value(b), grad(b)
    return dofs


def test_monomial_derivatives_match_finite_differences(rng):
    xi = rng.uniform(-1, 1, (4, 2))
    h = 1e-6
    for d in [(1, 0), (0, 1)]:
        e = np.array(d, dtype=float)
        fd = (monomials(xi + h * e) - monomials(xi - h * e)) / (2 * h)
        assert np.allclose(monomials(xi, d), fd, atol=1e-8)
    assert np.allclose(monomials(xi, (2, 2))[:, :10], 0)


def test_reference_element_nodal_basis():
    el = build_hct(REF)
    D = el.dof_matrix()[0] @ el.coeffs[0].reshape(45, 21)
    assert np.abs(D - np.eye(21)).max() <= 1e-8
    assert el.constraint_rank.tolist() == [24]
    # first basis function: one at vertex (0,0), zero for the other functionals
    e0 = np.eye(21)[0]
    val = el.evaluate(e0[None], REF[None])[0]
    assert val == pytest.approx([1, 0, 0], abs=1e-12)


@pytest.mark.parametrize("tri", [REF, np.array([[0.1, 0.2], [2.0, -0.3], [0.7, 1.4]]),
                                 np.array([[5.0, 5.0], [5.001, 5.0], [5.0, 5.002]])])
def test_reproduces_quartics(tri, rng):
    el = build_hct(tri)
    coef = rng.uniform(-1, 1, 15)
    value, grad = _quartic(coef)
    dofs = _interpolate_local(el, value, grad)
    lam = rng.dirichlet(np.ones(3), 10)
    pts = lam @ tri
    assert np.allclose(el.evaluate(dofs[None], pts[None])[0], value(pts), atol=1e-9)
    g = np.stack([el.evaluate(dofs[None], pts[None], d)[0] for d in [(1, 0), (0, 1)]], axis=-1)
    assert np.allclose(g, grad(pts), atol=1e-9 * max(1, np.abs(grad(pts)).max()))


def test_partition_of_unity(rng):
    tri = np.array([[0.0, 0.0], [1.5, 0.2], [0.3, 0.9]])
    el = build_hct(tri)
    dofs = _interpolate_local(el, lambda p: 1.0, lambda p: np.zeros(2))
    pts = rng.dirichlet(np.ones(3), 30) @ tri
    assert np.allclose(el.evaluate(dofs[None], pts[None])[0], 1.0, atol=1e-12)


def test_interior_c1_continuity(rng):
    tri = np.array([[0.0, 0.0], [1.0, 0.3], [0.2, 1.1]])
    el = build_hct(tri)
    dofs = rng.standard_normal(21)
    b = el.barycenter[0]
    for k in range(3):
        d = tri[k] - b
        pts = (b + np.linspace(0, 1, 7)[:, None] * d)[None]
        left = np.full((1, 7), (k - 1) % 3)
        right = np.full((1, 7), k)
        for deriv in [(0, 0), (1, 0), (0, 1)]:
            a = el.evaluate(dofs[None], pts, deriv, sub=left)
            c = el.evaluate(dofs[None], pts, deriv, sub=right)
            assert np.abs(a - c).max() <= 1e-9


def test_degenerate_element_rejected():
    with pytest.raises(HctConstructionError):
        build_hct(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))


def test_dual_basis_biorthogonal():
    el = build_hct(np.array([[0.0, 0.0], [1.0, 0.2], [0.4, 0.8]]))
    assert np.abs(el.dual[0] @ el.mass[0] - np.eye(21)).max() <= 1e-8


def test_smooth_zero(refined_mesh):
    E = smooth(DofMap(refined_mesh).zero())
    assert not E.dofs.any()


def test_smooth_bubble(bubble, square):
    E = smooth(bubble)
    sp_ = E.space
    diag = int(np.flatnonzero(square.interior_faces)[0])
    mid = 3 * square.nvertices + 3 * diag
    assert E.dofs[mid] == pytest.approx(1.0)
    assert E.dofs[mid + 1: mid + 3] == pytest.approx([0.0, 0.0], abs=1e-13)
    centre = np.array([[[0.5, 0.5]]])
    for k in (0, 1):
        assert E.evaluate(np.array([k]), centre)[0, 0] == pytest.approx(1.0)
        assert np.allclose(E.gradient(np.array([k]), centre), 0, atol=1e-12)
    assert sp_.ndofs == 3 * (4 + 5 + 2)


def test_smooth_is_c1_and_clamped(refined_mesh, rng):
    E = smooth(DofMap(refined_mesh).random(rng))
    res = conformity_residuals(E)
    assert max(res.values()) <= 1e-9, res


def test_quasi_interpolate_zero(refined_mesh):
    d = DofMap(refined_mesh)
    w = HctFunction(HctSpace(refined_mesh), np.zeros(HctSpace(refined_mesh).ndofs))
    assert not quasi_interpolate(w, d).coeffs.any()
    assert not np.abs(quasi_interpolate(lambda x, y: 0 * x, d).coeffs).max() > 0


@pytest.mark.parametrize("mesh", [unit_square(), uniform_refine(unit_square(), 2),
                                  refine(uniform_refine(lshape(), 1), [0, 3, 7])])
def test_left_inverse(mesh, rng):
    d = DofMap(mesh)
    space = HctSpace(mesh)
    for _ in range(3):
        v = d.random(rng)
        assert np.abs(quasi_interpolate(smooth(v, space), d, space).coeffs - v.coeffs).max() <= 1e-8


def test_nodal_values_of_hct_functions(rng):
    mesh = uniform_refine(lshape(), 1)
    space = HctSpace(mesh)
    dofs = rng.standard_normal(space.ndofs)
    dofs[space.boundary] = 0
    w = HctFunction(space, dofs)
    d = DofMap(mesh)
    Iw = quasi_interpolate(w, d, space)
    # the P2 nodes are value DOFs of the HCT space: vertices and edge midpoints
    nv = mesh.nvertices
    nodal = np.concatenate([dofs[0:3 * nv:3], dofs[3 * nv:3 * (nv + mesh.nfaces):3]])
    assert np.allclose(Iw.coeffs, nodal[d.free], atol=1e-8)


def test_local_p2_preservation():
    mesh = uniform_refine(unit_square(), 2)
    d = DofMap(mesh)

    def q(x, y):
        return 1 + 2 * x - y + 3 * x * y - x * x + 0.5 * y * y

    q.degree = 2
    Iq = quasi_interpolate(q, d)
    xy = d.node_coords[d.free]
    assert np.allclose(Iq.coeffs, q(xy[:, 0], xy[:, 1]), atol=1e-9)


def test_quadrature_degree_check(square_dofmap):
    def w(x, y):
        return x ** 6

    w.degree = 6
    with pytest.raises(ValueError, match="quadrature degree"):
        quasi_interpolate(w, square_dofmap)
    quasi_interpolate(w, square_dofmap, quad_degree=10)


def test_quasi_interpolate_from_finer_mesh(rng):
    coarse = uniform_refine(unit_square(), 1)
    fine = refine(refine(coarse, [0, 2, 5]), [1, 4])
    dc = DofMap(coarse)
    v = dc.random(rng)
    # prolongate: P2 on each coarse element, so fine nodes take the coarse values
    df = DofMap(fine)
    xy = df.node_coords[df.free]
    anc = fine.ancestors_in(coarse)
    vf = np.empty(df.dim)
    for i, node in enumerate(df.free):
        k = anc[np.flatnonzero((df.elem_nodes == node).any(axis=1))[0]]
        lam = coarse.barycentric(k, xy[i])
        vf[i] = v.values_at(k, lam)
    Iv = quasi_interpolate(FeFunction(df, vf), dc)
    assert np.allclose(Iv.coeffs, v.coeffs, atol=1e-9)


def test_smoothing_error_vanishes_without_jumps():
    # E reproduces v on elements whose vertex patch sees no normal-derivative jump;
    # the zero function is the only such v in V(T), and perturbing one DOF is local
    mesh = uniform_refine(unit_square(), 3)
    d = DofMap(mesh)
    v = d.zero()
    node = d.free[len(d.free) // 2]
    v.coeffs[d.node_to_free[node]] = 1.0
    err = smoothing_error_norms(v, smooth(v))
    from biharm.verify import patch_faces
    from biharm.femspace import face_trace_data
    jumps = np.abs(face_trace_data(v).jump_dn).max(axis=1) > 0
    quiet = ~(patch_faces(mesh) @ jumps)
    assert quiet.any()
    assert np.abs(err[:, quiet]).max() < 1e-24
