import numpy as np
import pytest
import scipy.sparse as sp

from edvs.derived import (
    build_derived_space,
    inject,
    norm_derived,
    project_zero_average,
)
from edvs.dual import (
    apply_block,
    apply_dual,
    build_dual_operator,
    exchange,
    slices_sum,
    split_by_subdomain,
)
from edvs.exceptions import ContinuityError, IncompleteExchangeError, LocalityError
from edvs.ingest import (
    DecompositionMap,
    OriginalMatrix,
    generate_box_partition,
    generate_poisson_1d,
    generate_poisson_2d,
    interior_coupling_violations,
)

DM_1D5 = DecompositionMap.from_memberships([(0,), (0,), (0, 1), (1,), (1,)])


@pytest.fixture
def op_1d5():
    return build_dual_operator(generate_poisson_1d(5), build_derived_space(DM_1D5))


@pytest.fixture
def problem_2d():
    matrix = generate_poisson_2d(5, 5)
    dm = generate_box_partition(5, 5, 2, 2)
    ds = build_derived_space(dm)
    return matrix, dm, ds, build_dual_operator(matrix, ds)


def dense_dual(matrix, ds):
    """Oracle: the dual operator as an explicit matrix via injection/retraction."""
    from edvs.derived import injection_matrix, retraction_matrix

    return (injection_matrix(ds) @ matrix.csr @ retraction_matrix(ds)).toarray()


class TestSplit:
    def test_tie_goes_to_lowest_subdomain(self):
        slices = split_by_subdomain(generate_poisson_1d(5), DM_1D5)
        s0, s1 = slices
        assert s0.nodes.tolist() == [0, 1, 2]
        assert s1.nodes.tolist() == [2, 3, 4]
        # node 2's diagonal lives in slice 0; slice 1 keeps only its couplings to 3
        assert s0.matrix.toarray()[2, 2] == 2.0
        assert s1.matrix.toarray()[0, 0] == 0.0
        assert s1.matrix.toarray()[0, 1] == -1.0

    def test_slices_sum_to_original(self, problem_2d):
        matrix, _, _, op = problem_2d
        assert (slices_sum(op) != matrix.csr).nnz == 0

    def test_diagonal_matrix(self):
        dm = DecompositionMap.from_memberships([(0,), (0,), (1,), (1,)])
        m = OriginalMatrix(csr=sp.diags([1.0, 2.0, 3.0, 4.0]).tocsr(), symmetric=True)
        slices = split_by_subdomain(m, dm)
        assert np.allclose(slices[0].matrix.toarray(), np.diag([1.0, 2.0]))
        assert np.allclose(slices[1].matrix.toarray(), np.diag([3.0, 4.0]))

    def test_locality_violation_raises(self):
        dm = DecompositionMap.from_memberships([(0,), (0,), (1,), (1,), (1,)])
        with pytest.raises(LocalityError):
            split_by_subdomain(generate_poisson_1d(5), dm)


class TestApplyDual:
    def test_unit_vector_oracle(self, op_1d5):
        # frozen from the dense oracle: column of the tridiagonal matrix at the
        # shared node, copied onto both descendants of node 2
        u = inject(np.array([0.0, 0, 1, 0, 0]), op_1d5.space)
        out = apply_dual(op_1d5, u)
        assert np.allclose(out, [0.0, -1.0, 2.0, 2.0, -1.0, 0.0], atol=1e-15)
        assert np.allclose(out, dense_dual(generate_poisson_1d(5), op_1d5.space) @ u, atol=1e-14)

    def test_identity_matrix_acts_as_identity(self, rng):
        m = OriginalMatrix(csr=sp.eye(5, format="csr"), symmetric=True)
        op = build_dual_operator(m, build_derived_space(DM_1D5))
        u = inject(rng.standard_normal(5), op.space)
        assert np.allclose(apply_dual(op, u), u, atol=1e-15)

    def test_duality_preservation_random(self, problem_2d, rng):
        matrix, _, ds, op = problem_2d
        for _ in range(100):
            u_hat = rng.standard_normal(25)
            want = inject(matrix.csr @ u_hat, ds)
            got = apply_dual(op, inject(u_hat, ds))
            assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)

    def test_result_stays_continuous(self, problem_2d, rng):
        _, _, ds, op = problem_2d
        out = apply_dual(op, inject(rng.standard_normal(25), ds))
        assert norm_derived(project_zero_average(out, ds), ds) <= 1e-12 * norm_derived(out, ds)

    def test_discontinuous_input_rejected(self, op_1d5):
        bad = np.zeros(6)
        bad[2] = 1.0
        with pytest.raises(ContinuityError):
            apply_dual(op_1d5, bad)

    def test_projection_flag(self, op_1d5):
        bad = np.zeros(6)
        bad[2] = 1.0  # projects to half on both copies of node 2
        half = inject(np.array([0.0, 0, 0.5, 0, 0]), op_1d5.space)
        assert np.allclose(apply_dual(op_1d5, bad, project=True),
                           apply_dual(op_1d5, half), atol=1e-15)

    def test_thread_count_bit_exact(self, problem_2d, rng):
        _, _, ds, op = problem_2d
        u = inject(rng.standard_normal(25), ds)
        assert np.array_equal(apply_dual(op, u, threads=1), apply_dual(op, u, threads=4))


class TestApplyBlock:
    def test_interior_block_matches_original(self, op_1d5):
        # interior derived order is [(0,0),(1,0),(3,1),(4,1)]; e1 selects node 1
        e1 = np.zeros(4)
        e1[1] = 1.0
        out = apply_block(op_1d5, "II", e1)
        assert out.tolist() == [-1.0, 2.0, 0.0, 0.0]

    def test_interface_block_single_node(self, op_1d5):
        pair = np.ones(2)
        assert apply_block(op_1d5, "GG", pair).tolist() == [2.0, 2.0]

    def test_reassembly_matches_apply_dual(self, problem_2d, rng):
        _, _, ds, op = problem_2d
        for _ in range(10):
            u_hat = rng.standard_normal(25)
            u = inject(u_hat, ds)
            u_i = u[ds.interior_positions]
            u_g = u[ds.gamma_positions]
            full = apply_dual(op, u)
            top = apply_block(op, "II", u_i) + apply_block(op, "IG", u_g)
            bottom = apply_block(op, "GI", u_i) + apply_block(op, "GG", u_g)
            assert np.linalg.norm(top - full[ds.interior_positions]) <= 1e-12 * np.linalg.norm(full)
            assert np.linalg.norm(bottom - full[ds.gamma_positions]) <= 1e-12 * np.linalg.norm(full)

    def test_unknown_block(self, op_1d5):
        with pytest.raises(ValueError, match="unknown block"):
            apply_block(op_1d5, "XX", np.zeros(4))

    def test_shape_mismatch(self, op_1d5):
        with pytest.raises(ValueError):
            apply_block(op_1d5, "II", np.zeros(6))


class TestExchange:
    def test_average_within_group(self, op_1d5):
        ds = op_1d5.space
        out = exchange([np.array([0.0, 0.0, 2.0]), np.array([4.0, 0.0, 0.0])], ds)
        assert out[2] == out[3] == 3.0

    def test_single_membership_passthrough(self, op_1d5):
        ds = op_1d5.space
        out = exchange([np.array([5.0, 0.0, 0.0]), np.zeros(3)], ds)
        assert out[0] == 5.0

    def test_zero_contributions(self, op_1d5):
        assert np.all(exchange([np.zeros(3), np.zeros(3)], op_1d5.space) == 0.0)

    def test_missing_slice_errors(self, op_1d5):
        ds = op_1d5.space
        with pytest.raises(IncompleteExchangeError):
            exchange([np.zeros(3)], ds)
        with pytest.raises(IncompleteExchangeError):
            exchange([np.zeros(3), None], ds)
        with pytest.raises(IncompleteExchangeError):
            exchange([np.zeros(3), np.zeros(2)], ds)


class TestInteriorBlockDiagonality:
    @pytest.mark.parametrize(
        "nx,ny,px,py", [(5, 1, 2, 1), (17, 1, 4, 1), (5, 5, 2, 2), (9, 9, 4, 4)]
    )
    def test_no_cross_subdomain_interior_coupling(self, nx, ny, px, py):
        matrix = generate_poisson_1d(nx) if ny == 1 else generate_poisson_2d(nx, ny)
        dm = generate_box_partition(nx, ny, px, py)
        assert interior_coupling_violations(matrix, dm) == []

    def test_slice_interiors_are_disjoint_blocks(self, problem_2d):
        # within the split, interior rows of one subdomain never touch another's
        matrix, dm, ds, op = problem_2d
        interior = set(dm.interior_nodes.tolist())
        for s in op.slices:
            coo = s.matrix.tocoo()
            for r, c in zip(coo.row, coo.col):
                p, q = int(s.nodes[r]), int(s.nodes[c])
                if p in interior and q in interior and p != q:
                    assert dm.memberships[p] == dm.memberships[q]
