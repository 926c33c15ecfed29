"""CovModel variants against dense oracles."""

import numpy as np
import pytest

from kronfilter.covmodels import (
    CovModel,
    DenseCov,
    DensePrec,
    KPExpCov,
    KPPrec,
    KSPrec,
    SqKSPrec,
    cov_apply,
    cov_solve,
)
from kronfilter.errors import DimensionError
from kronfilter.grids import GridShape
from kronfilter.kronops import KronExpansion, KronSumOperator


def spd(rng, n, shift=None):
    M = rng.standard_normal((n, n))
    return M @ M.T + (shift if shift is not None else n) * np.eye(n)


def all_models(rng, d1=3, d2=4):
    A = spd(rng, d1)
    B = spd(rng, d2)
    A2 = spd(rng, d1)
    B2 = spd(rng, d2)
    Sig = spd(rng, d1 * d2)
    models = [
        DenseCov(Sig, GridShape(d1, d2)),
        DensePrec(np.linalg.inv(Sig), GridShape(d1, d2)),
        KPPrec(A, B),
        KSPrec(A, B),
        SqKSPrec(A, B),
        KPExpCov(KronExpansion(GridShape(d1, d2), [(A, B)])),
        KPExpCov(KronExpansion(GridShape(d1, d2), [(A, B), (A2, B2)])),
    ]
    return models


class TestDenseVariants:
    def test_identity_prec_apply_solve(self):
        M = DensePrec(np.eye(4))
        v = np.arange(4.0)
        assert np.allclose(cov_apply(M, v), v)
        assert np.allclose(cov_solve(M, v), v)

    def test_singular_dense_cov_gets_ridge(self):
        Sig = np.outer([1.0, 2.0], [1.0, 2.0])  # rank 1
        M = DenseCov(Sig)
        out = M.solve(np.array([1.0, 0.0]))
        assert np.all(np.isfinite(out))
        assert "solve_ridge" in M.metadata
        assert M.metadata["solve_ridge"] == pytest.approx(1e-8 * np.trace(Sig) / 2)

    def test_dimension_mismatch(self):
        M = DenseCov(np.eye(4))
        with pytest.raises(DimensionError):
            M.apply(np.ones(5))


class TestStructuredAgainstDense:
    @pytest.mark.parametrize("seed", range(3))
    def test_apply_matches_dense_sigma(self, seed):
        rng = np.random.default_rng(seed)
        for M in all_models(rng):
            Sig = M.dense_sigma()
            v = rng.standard_normal(M.d)
            assert np.allclose(M.apply(v), Sig @ v, atol=1e-9 * np.abs(Sig).max()), M.kind

    @pytest.mark.parametrize("seed", range(3))
    def test_solve_matches_dense(self, seed):
        rng = np.random.default_rng(10 + seed)
        for M in all_models(rng):
            Sig = M.dense_sigma()
            v = rng.standard_normal(M.d)
            expect = np.linalg.solve(Sig, v)
            got = M.solve(v)
            assert np.linalg.norm(got - expect) <= 1e-8 * np.linalg.norm(expect), M.kind

    @pytest.mark.parametrize("seed", range(3))
    def test_solve_apply_roundtrip(self, seed):
        rng = np.random.default_rng(20 + seed)
        for M in all_models(rng, d1=4, d2=4):
            v = rng.standard_normal(M.d)
            back = M.solve(M.apply(v))
            assert np.linalg.norm(back - v) <= 1e-8 * np.linalg.norm(v), M.kind

    @pytest.mark.parametrize("seed", range(3))
    def test_observed_block_and_basis(self, seed):
        rng = np.random.default_rng(30 + seed)
        for M in all_models(rng):
            Sig = M.dense_sigma()
            idx = np.sort(rng.choice(M.d, size=M.d // 2, replace=False))
            assert np.allclose(M.observed_block(idx), Sig[np.ix_(idx, idx)],
                               atol=1e-9 * np.abs(Sig).max()), M.kind
            assert np.allclose(M.apply_basis(idx), Sig[:, idx],
                               atol=1e-9 * np.abs(Sig).max()), M.kind

    def test_ks_prec_solve_is_kron_sum_apply(self):
        rng = np.random.default_rng(5)
        A, B = spd(rng, 3), spd(rng, 3)
        M = KSPrec(A, B)
        op = KronSumOperator(A, B)
        v = rng.standard_normal(9)
        expect = op.dense() @ v
        assert np.allclose(M.solve(v), expect, atol=1e-10)

    def test_implied_sigma_symmetric_psd(self):
        rng = np.random.default_rng(6)
        for M in all_models(rng):
            Sig = M.dense_sigma()
            assert np.allclose(Sig, Sig.T, atol=1e-10), M.kind
            eigs = np.linalg.eigvalsh(Sig)
            assert eigs.min() >= -1e-8 * max(1.0, eigs.max()), M.kind

    def test_structure_matrix_sides(self):
        rng = np.random.default_rng(7)
        models = all_models(rng)
        sides = {M.kind: M.structure_matrix()[0] for M in models}
        assert sides["dense_cov"] == "covariance"
        assert sides["dense_prec"] == "precision"
        assert sides["kp_prec"] == "precision"
        assert sides["ks_prec"] == "precision"
        assert sides["sqks_prec"] == "precision"
        assert sides["kpexp_cov"] == "covariance"

    def test_kpexp_clipped_dense_override(self):
        rng = np.random.default_rng(8)
        A, B = spd(rng, 3), spd(rng, 3)
        exp = KronExpansion(GridShape(3, 3), [(A, B)])
        override = exp.dense() + 0.5 * np.eye(9)
        M = KPExpCov(exp, dense_override=override)
        assert M.metadata.get("psd_clipped") is True
        v = rng.standard_normal(9)
        assert np.allclose(M.apply(v), override @ v, atol=1e-12)
