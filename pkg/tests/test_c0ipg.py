import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sym

from biharm.c0ipg import (
    IndefiniteSystemError, assemble, assemble_lifted, aux_functionals, bilinear, energy_gram,
    energy_norm, export_matrix, generalized_extremes, lifting, lifting_tensors, relative_residual,
    sigma_star, smallest_pivot, solve,
)
from biharm.femspace import DofMap, FeFunction, interpolate
from biharm.mesh import load_mesh, lshape, refine, uniform_refine, unit_square
from fixture_oracle import SIGMA, quantities

ORACLE = quantities()


def _diag(square):
    return int(np.flatnonzero(square.interior_faces)[0])


@pytest.mark.parametrize("sigma", [0.1, 3.0, 20.0, 137.5])
def test_fixture_matrix_matches_symbolic(square_dofmap, sigma):
    a = float(ORACLE["a"].subs(SIGMA, sigma))
    A = assemble(square_dofmap, sigma).A
    assert A.shape == (1, 1)
    assert A[0, 0] == pytest.approx(a, rel=1e-13)
    assert assemble_lifted(square_dofmap, sigma)[0, 0] == pytest.approx(a, rel=1e-13)


def test_fixture_matrix_value():
    # pinned after the symbolic derivation above
    assert sym.simplify(ORACLE["a"] - (-32 + 160 * SIGMA / 3)) == 0
    assert (ORACLE["volume"], ORACLE["consistency"]) == (32, -64)
    assert (ORACLE["interior_penalty"], ORACLE["boundary_penalty"]) == (32, sym.Rational(64, 3))


def test_fixture_energy_norm(bubble):
    parts = energy_norm(bubble, 3.0)
    assert parts.volume == pytest.approx(float(ORACLE["volume"]), rel=1e-13)
    jump = float(ORACLE["interior_penalty"] + ORACLE["boundary_penalty"])
    assert parts.jump == pytest.approx(3.0 * jump, rel=1e-13)
    assert parts.total == pytest.approx(192.0, rel=1e-13)


def test_fixture_load_and_solution(square_dofmap):
    sys_ = assemble(square_dofmap, 20.0, lambda x, y: np.ones_like(x))
    assert sys_.b[0] == pytest.approx(float(ORACLE["load"]), rel=1e-13)
    assert sys_.b[0] == pytest.approx(1 / 3, rel=1e-13)
    u = solve(sys_)
    assert u.coeffs[0] == pytest.approx(1 / 3104, rel=1e-12)


def test_fixture_indefinite(square_dofmap):
    sys_ = assemble(square_dofmap, 0.1, lambda x, y: np.ones_like(x))
    with pytest.raises(IndefiniteSystemError, match="not positive definite") as info:
        solve(sys_)
    assert info.value.value == pytest.approx(-32 + 16 / 3, rel=1e-12)


def test_fixture_h1(bubble):
    assert aux_functionals(bubble)["broken_h1"] == pytest.approx(16 / 3, rel=1e-13)
    assert float(ORACLE["h1"]) == pytest.approx(16 / 3)


def test_fixture_liftings(square):
    diag = _diag(square)
    L = lifting(square, diag, np.sqrt(2))  # ∫_F 1 ds = |F|
    assert sorted(L) == [0, 1]
    r = np.sqrt(2) / 2
    for T in L.values():
        assert np.allclose(T, [[r, -r], [-r, r]])
    bottom = int(np.flatnonzero((square.edges == [0, 1]).all(axis=1))[0])
    L = lifting(square, bottom, 1.0)
    assert list(L) == [0]
    assert np.allclose(L[0], [[0, 0], [0, 2]])
    assert all(not T.any() for T in lifting(square, diag, 0.0).values())


def test_zero_load(refined_mesh):
    sys_ = assemble(DofMap(refined_mesh), 20.0, lambda x, y: 0 * x)
    assert not sys_.b.any()
    assert not solve(sys_).coeffs.any()


def test_rejects_nonpositive_sigma(square_dofmap):
    for s in (0.0, -1.0):
        with pytest.raises(ValueError):
            assemble(square_dofmap, s)


def test_empty_space():
    m = load_mesh({"vertices": [[0, 0], [1, 0], [0, 1]], "triangles": [[0, 1, 2]]})
    sys_ = assemble(DofMap(m), 20.0, lambda x, y: 1 + 0 * x)
    assert sys_.A.shape == (0, 0) and sys_.b.shape == (0,)
    assert solve(sys_).coeffs.shape == (0,)


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_form_equivalence(levels, rng):
    for base in (unit_square(), lshape()):
        mesh = uniform_refine(base, levels)
        d = DofMap(mesh)
        A = assemble(d, 20.0).A
        B = assemble_lifted(d, 20.0)
        assert abs(A - B).max() <= 1e-10 * abs(A).max()
        v, w = d.random(rng), d.random(rng)
        av, bv = bilinear(A, v, w), bilinear(B, v, w)
        assert abs(av - bv) <= 1e-10 * (1 + abs(av))


def test_symmetry_and_pattern(refined_mesh):
    d = DofMap(refined_mesh)
    A = assemble(d, 20.0).A
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    # couplings only between DOFs sharing an element or a face patch
    nodes = d.elem_nodes
    e1, e2 = refined_mesh.edge_elems.T
    inner = e2 >= 0
    patches = list(nodes) + [np.concatenate([nodes[a], nodes[b]]) for a, b in zip(e1[inner], e2[inner])]
    allowed = set()
    for p in patches:
        p = d.node_to_free[p]
        p = p[p >= 0]
        allowed.update((i, j) for i in p for j in p)
    coo = A.tocoo()
    assert set(zip(coo.row.tolist(), coo.col.tolist())) <= allowed


def test_zero_jumps_have_zero_liftings(refined_mesh):
    elems, T = lifting_tensors(refined_mesh, np.zeros(refined_mesh.nfaces))
    assert not T.any()
    # boundary faces lift onto their single element with weight one
    phi = np.ones(refined_mesh.nfaces)
    elems, T = lifting_tensors(refined_mesh, phi)
    bf = refined_mesh.boundary_faces
    assert not T[bf, 1].any()
    assert np.allclose(np.trace(T[bf, 0], axis1=1, axis2=2), 1 / refined_mesh.area[elems[bf, 0]])


def test_energy_norm_homogeneous(refined_mesh, rng):
    v = DofMap(refined_mesh).random(rng)
    a, b = energy_norm(v), energy_norm(2.5 * v)
    assert b.volume == pytest.approx(6.25 * a.volume, rel=1e-12)
    assert b.jump == pytest.approx(6.25 * a.jump, rel=1e-12)
    assert energy_norm(DofMap(refined_mesh).zero()).total == 0.0


def test_energy_gram_matches_energy_norm(refined_mesh, rng):
    d = DofMap(refined_mesh)
    v = d.random(rng)
    M = energy_gram(d, 7.0)
    assert v.coeffs @ (M @ v.coeffs) == pytest.approx(energy_norm(v, 7.0).total, rel=1e-11)


def test_galerkin_consistency(refined_mesh):
    d = DofMap(refined_mesh)
    sys_ = assemble(d, 20.0, lambda x, y: np.cos(x) + y * y)
    u = solve(sys_)
    assert relative_residual(sys_, u) <= 1e-10


def test_cg_matches_direct(refined_mesh):
    d = DofMap(refined_mesh)
    sys_ = assemble(d, 20.0, lambda x, y: 1 + x)
    u = solve(sys_)
    v = solve(sys_, method="cg", tol=1e-12)
    assert np.allclose(u.coeffs, v.coeffs, rtol=1e-8, atol=1e-12 * np.abs(u.coeffs).max())


def test_cg_detects_indefiniteness(square_dofmap):
    sys_ = assemble(square_dofmap, 0.1, lambda x, y: np.ones_like(x))
    with pytest.raises(IndefiniteSystemError):
        solve(sys_, method="cg")


def test_unknown_solver(square_dofmap):
    sys_ = assemble(square_dofmap, 20.0, lambda x, y: np.ones_like(x))
    with pytest.raises(ValueError):
        solve(sys_, method="qr")


def test_smallest_pivot_sign():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, -3.0]]))
    assert smallest_pivot(A) < 0
    assert smallest_pivot(sp.identity(3, format="csr")) == pytest.approx(1.0)


def test_coercivity_on_small_meshes():
    for mesh in (unit_square(), uniform_refine(unit_square(), 1), uniform_refine(lshape(), 1)):
        lo, hi = generalized_extremes(DofMap(mesh), 20.0)
        assert 0 < lo <= hi < 10


def test_sigma_star_fixture(square):
    # A11 = -32 + 160 σ / 3 changes sign at σ = 0.6
    assert sigma_star(square) == pytest.approx(0.6, rel=1e-5)
    with pytest.raises(ValueError):
        sigma_star(square, 0.1, 0.5)


def test_aux_functionals_zero_and_smooth(refined_mesh):
    d = DofMap(refined_mesh)
    assert aux_functionals(d.zero()) == {"broken_h1": 0.0, "tv_grad": 0.0}
    # a single P2 quadratic on a patch of elements clear of the boundary has no jumps
    fn = interpolate(d, lambda x, y: x * y)
    tv_volume = np.sum(refined_mesh.area * np.linalg.norm(fn.hessians, axis=(1, 2)))
    assert aux_functionals(fn)["tv_grad"] >= tv_volume


def test_tv_of_bubble(bubble):
    # |D²φ| = 4√2 on both triangles; |⟦∂ₙφ⟧| integrates to 4√2·√2 on the diagonal
    # and to 2 on each boundary side
    expected = 4 * np.sqrt(2) + 8 + 4 * 2
    assert aux_functionals(bubble)["tv_grad"] == pytest.approx(expected, rel=1e-13)


def test_stability_of_solution():
    # ‖u_T‖_T ≤ C ‖f‖ with C stable over levels
    ratios = []
    for k in range(1, 4):
        d = DofMap(uniform_refine(unit_square(), k))
        u = solve(assemble(d, 20.0, lambda x, y: np.ones_like(x)))
        ratios.append(np.sqrt(energy_norm(u).total))
    assert max(ratios) <= 3 * min(ratios)


def test_export_matrix(tmp_path, refined_mesh):
    A = assemble(DofMap(refined_mesh), 20.0).A
    export_matrix(A, tmp_path / "A.mtx")
    import scipy.io
    B = scipy.io.mmread(tmp_path / "A.mtx")
    assert abs(A - B).max() < 1e-14 * abs(A).max()
