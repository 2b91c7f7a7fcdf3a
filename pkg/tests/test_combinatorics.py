import itertools

import numpy as np
import pytest

from misa import (
    BlockTransform,
    DomainError,
    MultiDataset,
    OptimOptions,
    ShapeError,
    SimSpec,
    SubspaceAssignment,
    build_instance,
    gp,
    hungarian,
    match,
    misa_gp_mdm,
    misa_gp_sdm,
    random_row_orthonormal,
    run_misa,
    subspace_perm,
)
from misa.combinatorics import TIE_EPS, cost_value

OPTS = OptimOptions(tol_fun=1e-8)


def brute_force_assignment(cost):
    n = cost.shape[0]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best - 1e-12:
            best, best_perm = total, perm
    return best, best_perm


class TestHungarian:
    def test_identity_complement(self):
        cost = 1.0 - np.eye(4)
        np.testing.assert_array_equal(hungarian(cost), np.arange(4))

    def test_worked_example(self):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        perm = hungarian(cost)
        np.testing.assert_array_equal(perm, [1, 0, 2])
        assert sum(cost[i, perm[i]] for i in range(3)) == 5.0

    def test_constant_matrix_lexicographic(self):
        np.testing.assert_array_equal(hungarian(np.full((5, 5), 3.0)), np.arange(5))

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            hungarian(np.zeros((2, 3)))

    def test_matches_exhaustive_1000_random(self):
        rng = np.random.default_rng(0)
        for trial in range(1000):
            n = 2 + trial % 6  # K in 2..7
            cost = rng.integers(-20, 20, size=(n, n)).astype(float)
            perm = hungarian(cost)
            total = sum(cost[i, perm[i]] for i in range(n))
            best, _ = brute_force_assignment(cost)
            assert total == pytest.approx(best)


class TestMatch:
    def test_identical_is_identity(self):
        P = SubspaceAssignment.from_dataset_dims(np.array([[2], [1], [3]]))
        np.testing.assert_array_equal(match(P, P), np.arange(6))

    def test_label_permutation_is_identity(self):
        # matching is by source-set overlap, so relabeling subspaces while
        # keeping the same source sets changes nothing
        Pu = SubspaceAssignment.from_dataset_dims(np.array([[2], [2]]))
        Pe = SubspaceAssignment(np.asarray(Pu.P)[[1, 0]], Pu.col_dims)
        np.testing.assert_array_equal(match(Pe, Pu), [0, 1, 2, 3])

    def test_size_mismatch_reorders(self):
        # prescribed sizes (1, 2); estimate found (2, 1) with overlaps that
        # force est subspace 1 = {2} onto prescribed subspace 0
        Pu = SubspaceAssignment.from_dataset_dims(np.array([[1], [2]]))
        Pe = SubspaceAssignment(np.array([[1, 1, 0], [0, 0, 1]]), [3])
        np.testing.assert_array_equal(match(Pe, Pu), [2, 0, 1])

    def test_partial_overlap_exhaustive_k3(self):
        # one source misassigned; check against exhaustion over bijections
        Pu = SubspaceAssignment.from_dataset_dims(np.array([[2], [2], [2]]))
        Pe_mat = np.array([
            [1, 1, 1, 0, 0, 0],   # grabs source 2 too
            [0, 0, 0, 1, 0, 0],
            [0, 0, 0, 0, 1, 1],
        ])
        Pe = SubspaceAssignment(Pe_mat, [6])
        order = match(Pe, Pu)
        # the best bijection maps est0->ud0 (overlap 2), est1->ud1, est2->ud2
        assert list(order[:3]) == [0, 1, 2]
        assert list(order[3:4]) == [3]
        assert list(order[4:]) == [4, 5]

    def test_source_count_mismatch(self):
        P1 = SubspaceAssignment.singletons([3])
        P2 = SubspaceAssignment.singletons([4])
        with pytest.raises(ShapeError):
            match(P1, P2)


def isa_instance(seed=9, n_obs=4000):
    spec = SimSpec(subspace_dims=np.array([[2], [2]]), dims_v=[4], n_obs=n_obs,
                   cond_target=2.0, rho_max=0.6, seed=seed)
    return build_instance(spec)


class TestGp:
    def test_truth_is_fixed_point(self):
        data, truth, P = isa_instance()
        W = BlockTransform([np.linalg.inv(truth.A.blocks[0])])
        out = gp(data, P, W)
        assert partition(out) == partition(P)

    def test_recovers_partition_from_singletons(self):
        data, truth, P = isa_instance()
        W = BlockTransform([np.linalg.inv(truth.A.blocks[0])])
        P0 = SubspaceAssignment.singletons([4])
        out = gp(data, P0, W)
        assert partition(out) == {frozenset({0, 1}), frozenset({2, 3})}
        # brute force over all 15 partitions of 4 sources confirms the optimum
        best = min(all_partitions(4),
                   key=lambda q: cost_value(data, from_partition(q), W))
        assert partition(out) == frozenset(frozenset(g) for g in best)

    def test_independent_sources_stay_singletons(self):
        spec = SimSpec(subspace_dims=np.ones((4, 1), dtype=int), dims_v=[4],
                       n_obs=4000, cond_target=2.0, seed=5)
        data, truth, P = build_instance(spec)
        W = BlockTransform([np.linalg.inv(truth.A.blocks[0])])
        out = gp(data, P, W)
        assert partition(out) == partition(P)

    def test_never_increases_cost(self):
        rng = np.random.default_rng(3)
        data, truth, P = isa_instance()
        for _ in range(3):
            W = BlockTransform([random_row_orthonormal(4, 4, rng)])
            P0 = SubspaceAssignment.singletons([4])
            out = gp(data, P0, W)
            assert cost_value(data, out, W) <= cost_value(data, P0, W) + TIE_EPS

    def test_output_well_formed(self):
        rng = np.random.default_rng(4)
        data, _, _ = isa_instance()
        W = BlockTransform([random_row_orthonormal(4, 4, rng)])
        out = gp(data, SubspaceAssignment.singletons([4]), W)
        assert np.all(np.asarray(out.P).sum(axis=0) == 1)
        assert np.all(np.asarray(out.P).sum(axis=1) >= 1)


def partition(P):
    return frozenset(frozenset(int(c) for c in P.sources(k))
                     for k in range(P.n_subspaces))


def all_partitions(n):
    if n == 1:
        return [[[0]]]
    out = []
    for sub in all_partitions(n - 1):
        for i in range(len(sub)):
            out.append([g + [n - 1] if j == i else g for j, g in enumerate(sub)])
        out.append(sub + [[n - 1]])
    return out


def from_partition(groups):
    C = sum(len(g) for g in groups)
    P = np.zeros((len(groups), C), dtype=int)
    for k, g in enumerate(groups):
        P[k, list(g)] = 1
    return SubspaceAssignment(P, [C])


class TestDrivers:
    def test_sdm_t0_equals_plain(self):
        data, truth, P = isa_instance()
        rng = np.random.default_rng(0)
        W0 = BlockTransform([random_row_orthonormal(4, 4, rng)])
        sol_plain = run_misa(data, P, W0, opts=OPTS)
        sol_t0 = misa_gp_sdm(data, P, W0, T=0, opts=OPTS)
        assert sol_t0.objective_value == pytest.approx(sol_plain.objective_value)

    def test_sdm_never_worse_than_plain(self):
        data, truth, P = isa_instance()
        for seed in range(3):
            rng = np.random.default_rng(seed)
            W0 = BlockTransform([random_row_orthonormal(4, 4, rng)])
            sol_plain = run_misa(data, P, W0, opts=OPTS)
            sol_gp = misa_gp_sdm(data, P, W0, T=2, opts=OPTS)
            assert sol_gp.objective_value <= sol_plain.objective_value + TIE_EPS

    def test_mdm_single_dataset_close_to_sdm(self):
        data, truth, P = isa_instance()
        rng = np.random.default_rng(1)
        W0 = BlockTransform([random_row_orthonormal(4, 4, rng)])
        sol_s = misa_gp_sdm(data, P, W0, T=1, opts=OPTS)
        sol_m = misa_gp_mdm(data, P, W0, T=1, opts=OPTS)
        # same pipeline up to the subspace_perm no-op and the stored-cost
        # convention; final unmixings must agree
        np.testing.assert_allclose(sol_m.W_final.blocks[0], sol_s.W_final.blocks[0],
                                   atol=1e-6)


class TestSubspacePerm:
    def test_distinct_sizes_identity(self):
        spec = SimSpec(subspace_dims=np.array([[1, 1], [2, 2]]), dims_v=[3, 3],
                       n_obs=1000, cond_target=2.0, seed=2)
        data, truth, P = build_instance(spec)
        W = BlockTransform([np.linalg.inv(A) for A in truth.A.blocks])
        out = subspace_perm(data, P, W)
        for a, b in zip(out.blocks, W.blocks):
            np.testing.assert_array_equal(a, b)

    def test_detects_swap(self):
        spec = SimSpec(subspace_dims=np.array([[1, 1], [1, 1]]), dims_v=[2, 2],
                       n_obs=4000, cond_target=2.0, rho_max=0.7, seed=3)
        data, truth, P = build_instance(spec)
        W = [np.linalg.inv(A) for A in truth.A.blocks]
        W_sw = [W[0][[1, 0]], W[1]]  # swap the two subspaces in dataset 0 only
        c_bad = cost_value(data, P, BlockTransform(W_sw))
        out = subspace_perm(data, P, BlockTransform(W_sw))
        c_fixed = cost_value(data, P, out)
        assert c_fixed < c_bad - TIE_EPS
        # the optimum is label-degenerate: either un-swap dataset 0 or swap
        # dataset 1 to match; both align the subspaces across datasets
        c_ref = cost_value(data, P, BlockTransform(W))
        assert c_fixed == pytest.approx(c_ref, abs=1e-8)

    def test_exhaustive_greedy_agree(self):
        for seed in range(5):
            spec = SimSpec(subspace_dims=np.array([[1, 1], [1, 1], [1, 1]]),
                           dims_v=[3, 3], n_obs=2000, cond_target=2.0,
                           rho_max=0.7, seed=seed)
            data, truth, P = build_instance(spec)
            rng = np.random.default_rng(seed)
            W = BlockTransform([np.linalg.inv(A)[rng.permutation(3)]
                                for A in truth.A.blocks])
            out_e = subspace_perm(data, P, W, mode="exhaustive")
            out_g = subspace_perm(data, P, W, mode="greedy")
            assert cost_value(data, P, out_g) == pytest.approx(
                cost_value(data, P, out_e), abs=1e-9)

    def test_greedy_never_increases(self):
        spec = SimSpec(subspace_dims=np.ones((4, 2), dtype=int), dims_v=[4, 4],
                       n_obs=2000, cond_target=2.0, rho_max=0.6, seed=8)
        data, truth, P = build_instance(spec)
        rng = np.random.default_rng(8)
        W = BlockTransform([random_row_orthonormal(4, 4, rng) for _ in range(2)])
        out = subspace_perm(data, P, W, mode="greedy")
        assert cost_value(data, P, out) <= cost_value(data, P, W) + TIE_EPS

    def test_bad_mode(self):
        data, truth, P = isa_instance()
        W = BlockTransform([np.eye(4)])
        with pytest.raises(DomainError):
            subspace_perm(data, P, W, mode="quantum")
