from __future__ import annotations

import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from physim.commutant import (
    RelationViolation,
    commutant_dimension,
    commutant_dimension_oracle,
    equivalent_assignment,
    haar_unitary,
    sample_commuting_unitary,
    verify_relation_preservation,
)
from physim.hilbert import (
    HADAMARD,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    DimensionError,
    HermitianOperator,
    NotHermitianError,
    commutator,
    hermitian_part,
    identity,
)


def planted_hamiltonian(multiplicities: list[int], seed: int) -> HermitianOperator:
    rng = np.random.default_rng(seed)
    values = np.repeat(np.arange(len(multiplicities), dtype=float) * 0.75 - 1.0, multiplicities)
    basis = haar_unitary(len(values), rng).entries
    return HermitianOperator(hermitian_part((basis * values) @ basis.conj().T))


def random_multiplicities(rng: np.random.Generator, dim: int) -> list[int]:
    levels = int(rng.integers(1, dim + 1))
    cuts = np.sort(rng.choice(np.arange(1, dim), size=levels - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [dim]])).astype(int).tolist()


class CommutantDimensionTests(unittest.TestCase):
    def test_two_by_two_cases(self) -> None:
        self.assertEqual(commutant_dimension(np.diag([1.0, 2.0])), 2)
        self.assertEqual(commutant_dimension(np.diag([1.0, 1.0])), 4)
        self.assertEqual(commutant_dimension_oracle(np.diag([1.0, 2.0])), 2)
        self.assertEqual(commutant_dimension_oracle(np.diag([1.0, 1.0])), 4)

    def test_partially_degenerate(self) -> None:
        self.assertEqual(commutant_dimension(np.diag([1.0, 1.0, 2.0])), 5)
        self.assertEqual(commutant_dimension_oracle(np.diag([1.0, 1.0, 2.0])), 5)

    def test_non_hermitian(self) -> None:
        with self.assertRaises(NotHermitianError):
            commutant_dimension(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @settings(deadline=None, max_examples=25)
    @given(
        multiplicities=st.lists(st.integers(min_value=1, max_value=3), min_size=1, max_size=4),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_sum_of_squares_matches_brute_force(self, multiplicities: list[int], seed: int) -> None:
        H = planted_hamiltonian(multiplicities, seed)
        dimension = commutant_dimension(H)
        self.assertEqual(dimension, sum(m * m for m in multiplicities))
        self.assertEqual(dimension, commutant_dimension_oracle(H))
        self.assertGreaterEqual(dimension, H.dim)
        self.assertLessEqual(dimension, H.dim**2)

    def test_planted_multiplicities_up_to_sixteen(self) -> None:
        rng = np.random.default_rng(16)
        for dim in range(2, 17):
            for _ in range(50):
                multiplicities = random_multiplicities(rng, dim)
                H = planted_hamiltonian(multiplicities, int(rng.integers(2**32)))
                dimension = commutant_dimension(H)
                self.assertEqual(dimension, sum(m * m for m in multiplicities))
                self.assertEqual(dimension, commutant_dimension_oracle(H))
                self.assertTrue(dim <= dimension <= dim * dim)

    def test_bounds_are_attained(self) -> None:
        rng = np.random.default_rng(11)
        raw = rng.standard_normal((6, 6))
        generic = HermitianOperator(raw + raw.T)
        self.assertEqual(commutant_dimension(generic), 6)
        self.assertEqual(commutant_dimension(3.0 * np.eye(6)), 36)


class SamplingTests(unittest.TestCase):
    def test_haar_unitary(self) -> None:
        U = haar_unitary(5, np.random.default_rng(0)).entries
        np.testing.assert_allclose(U @ U.conj().T, np.eye(5), atol=1e-10)
        with self.assertRaises(DimensionError):
            haar_unitary(0, np.random.default_rng(0))

    def test_nondegenerate_gives_phases(self) -> None:
        S = sample_commuting_unitary(np.diag([1.0, 2.0]), seed=3).entries
        self.assertAlmostEqual(abs(S[0, 1]), 0.0, places=12)
        self.assertAlmostEqual(abs(S[1, 0]), 0.0, places=12)
        self.assertAlmostEqual(abs(S[0, 0]), 1.0, places=12)
        self.assertAlmostEqual(abs(S[1, 1]), 1.0, places=12)

    def test_block_structure(self) -> None:
        H = np.diag([1.0, 1.0, 2.0])
        S = sample_commuting_unitary(H, seed=7).entries
        self.assertLess(np.linalg.norm(S @ H - H @ S), 1e-9)
        np.testing.assert_allclose(S[:2, 2], 0.0, atol=1e-12)
        np.testing.assert_allclose(S[2, :2], 0.0, atol=1e-12)
        self.assertAlmostEqual(abs(S[2, 2]), 1.0, places=12)

    def test_scalar_hamiltonian(self) -> None:
        S = sample_commuting_unitary(np.eye(4), seed=5).entries
        np.testing.assert_allclose(S @ S.conj().T, np.eye(4), atol=1e-10)
        self.assertGreater(float(np.max(np.abs(S - np.diag(np.diag(S))))), 1e-3)

    def test_seed_determinism(self) -> None:
        H = planted_hamiltonian([2, 1, 3], seed=1)
        first = sample_commuting_unitary(H, seed=99).entries
        again = sample_commuting_unitary(H, seed=99).entries
        other = sample_commuting_unitary(H, seed=100).entries
        np.testing.assert_array_equal(first, again)
        self.assertGreater(float(np.max(np.abs(first - other))), 1e-6)

    @settings(deadline=None, max_examples=20)
    @given(
        multiplicities=st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=4),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_conjugation_leaves_hamiltonian_fixed(self, multiplicities: list[int], seed: int) -> None:
        H = planted_hamiltonian(multiplicities, seed)
        S = sample_commuting_unitary(H, seed=seed)
        self.assertLess(float(np.linalg.norm(commutator(S, H))), 1e-9)
        (image,) = equivalent_assignment([H], S)
        np.testing.assert_allclose(image.entries, H.entries, atol=1e-9)


class EquivalentAssignmentTests(unittest.TestCase):
    def test_identity(self) -> None:
        (image,) = equivalent_assignment([PAULI_Z], identity(2))
        np.testing.assert_allclose(image.entries, PAULI_Z.entries)

    def test_hadamard_swaps_z_and_x(self) -> None:
        z_image, x_image = equivalent_assignment([PAULI_Z, PAULI_X], HADAMARD)
        np.testing.assert_allclose(z_image.entries, PAULI_X.entries, atol=1e-12)
        np.testing.assert_allclose(x_image.entries, PAULI_Z.entries, atol=1e-12)

    def test_commuting_phases_leave_operator_unchanged(self) -> None:
        S = np.diag(np.exp(1j * np.array([0.4, 2.1])))
        (image,) = equivalent_assignment([np.diag([1.0, 2.0])], S)
        np.testing.assert_allclose(image.entries, np.diag([1.0, 2.0]), atol=1e-12)

    def test_dimension_mismatch(self) -> None:
        with self.assertRaises(DimensionError):
            equivalent_assignment([PAULI_Z], identity(3))


class RelationPreservationTests(unittest.TestCase):
    def setUp(self) -> None:
        self.paulis = [PAULI_X, PAULI_Y, PAULI_Z]

    def test_pauli_triple_under_hadamard(self) -> None:
        primed = equivalent_assignment(self.paulis, HADAMARD)
        report = verify_relation_preservation(self.paulis, primed, HADAMARD)
        self.assertTrue(report.passed)
        self.assertEqual(set(report.residuals), {"i", "ii", "iii", "iv"})

    def test_tampered_operator_names_first_clause(self) -> None:
        primed = list(equivalent_assignment(self.paulis, HADAMARD))
        primed[1] = HermitianOperator(primed[1].entries + 1e-3 * np.eye(2))
        with self.assertRaises(RelationViolation) as caught:
            verify_relation_preservation(self.paulis, primed, HADAMARD)
        self.assertEqual(caught.exception.clause, "i")
        self.assertIn("(i)", str(caught.exception))

    def test_hamiltonian_functional_with_commuting_unitary(self) -> None:
        H = planted_hamiltonian([2, 1, 1], seed=4)
        S = sample_commuting_unitary(H, seed=8)
        primed = equivalent_assignment([H], S)
        report = verify_relation_preservation(
            [H], primed, S, hamiltonian_functional=lambda ops: ops[0].entries
        )
        self.assertLessEqual(report.residuals["iv"], 1e-9)
        np.testing.assert_allclose(primed[0].entries, H.entries, atol=1e-9)

    @settings(deadline=None, max_examples=20)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), dim=st.integers(min_value=2, max_value=6))
    def test_random_families(self, seed: int, dim: int) -> None:
        rng = np.random.default_rng(seed)
        ops = []
        for _ in range(3):
            raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            ops.append(HermitianOperator(0.5 * (raw + raw.conj().T)))
        S = haar_unitary(dim, rng)
        report = verify_relation_preservation(ops, equivalent_assignment(ops, S), S)
        self.assertTrue(report.passed)

    def test_sampled_commuting_unitaries_up_to_sixteen(self) -> None:
        rng = np.random.default_rng(100)
        for trial in range(100):
            dim = 2 + trial % 15
            H = planted_hamiltonian(random_multiplicities(rng, dim), int(rng.integers(2**32)))
            family = [H]
            for _ in range(2):
                raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
                family.append(HermitianOperator(0.5 * (raw + raw.conj().T)))
            S = sample_commuting_unitary(H, seed=trial)
            primed = equivalent_assignment(family, S)
            report = verify_relation_preservation(
                family, primed, S, hamiltonian_functional=lambda ops: ops[0].entries
            )
            self.assertTrue(report.passed)
            np.testing.assert_allclose(primed[0].entries, H.entries, atol=1e-9)

    def test_length_mismatch(self) -> None:
        with self.assertRaises(DimensionError):
            verify_relation_preservation(self.paulis, [PAULI_X], HADAMARD)


if __name__ == "__main__":
    unittest.main()
