from __future__ import annotations

import dataclasses
import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from physim.experiment import CONSERVED_NAME, compile_schedule
from physim.hilbert import (
    PAULI_Z,
    HermitianOperator,
    StateVector,
    UnitaryOperator,
    embed,
    expectation,
    make_state,
    schmidt_rank,
)
from physim.macrostate import (
    Definite,
    MacrostateDecomposition,
    classify,
    joint_eigenspace_decomposition,
)
from physim.physication import (
    AssignmentLedger,
    DecompositionError,
    ProtectedSectorViolation,
    ScheduledEvent,
    SpectrumError,
    StrictModeUnsatisfiable,
    UnphysicatedSectorExhausted,
    World,
    construct_assignment_unitary,
    fresh_observable,
    initial_world,
    prepare_step,
    sample_label,
    step,
    trial_rng,
    verify_ledger,
)
from physim.scenarios import conservation_config, fresh_spin_config


def qubit_z(factor: int) -> MacrostateDecomposition:
    return joint_eigenspace_decomposition([embed({factor: PAULI_Z.entries}, (2, 2))])


def bare_world(state: StateVector, hamiltonian: HermitianOperator | None = None) -> World:
    H = hamiltonian or HermitianOperator(np.zeros((state.dim, state.dim)))
    return initial_world(state, H, MacrostateDecomposition.empty())


class FreshObservableTests(unittest.TestCase):
    def test_basis_state(self) -> None:
        observable = fresh_observable(make_state([1, 0]), (0.5, -0.5))
        np.testing.assert_allclose(observable.entries, 0.5 * PAULI_Z.entries, atol=1e-12)

    def test_eigenvector_is_the_state(self) -> None:
        state = make_state([0.6, 0.8])
        observable = fresh_observable(state, (0.5, -0.5))
        np.testing.assert_allclose(observable.entries @ state.amplitudes, 0.5 * state.amplitudes, atol=1e-10)

    def test_repeated_spectrum(self) -> None:
        with self.assertRaises(SpectrumError):
            fresh_observable(make_state([1, 0]), (0.5, 0.5))

    def test_grouped_complement(self) -> None:
        state = make_state([1, 1j, 0, 2])
        observable = fresh_observable(state, (1.0, 2.0, 3.0))
        np.testing.assert_allclose(observable.entries @ state.amplitudes, state.amplitudes, atol=1e-10)
        self.assertEqual(sorted(np.round(np.linalg.eigvalsh(observable.entries), 9)), [1.0, 2.0, 2.0, 3.0])

    def test_random_qubit_states(self) -> None:
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            state = make_state(rng.standard_normal(2) + 1j * rng.standard_normal(2))
            observable = fresh_observable(state, (0.5, -0.5)).entries
            amplitudes = state.amplitudes
            np.testing.assert_allclose(observable @ amplitudes, 0.5 * amplitudes, atol=1e-10)
            np.testing.assert_allclose(np.linalg.eigvalsh(observable), [-0.5, 0.5], atol=1e-10)


class AssignmentUnitaryTests(unittest.TestCase):
    def test_identity_case(self) -> None:
        state = make_state([1, 0])
        V = construct_assignment_unitary(state, state)
        np.testing.assert_allclose(V.entries, np.eye(2), atol=1e-12)

    def test_rotation_onto_target(self) -> None:
        psi, phi = make_state([1, 1]), make_state([1, 0])
        V = construct_assignment_unitary(psi, phi).entries
        np.testing.assert_allclose(V @ V.conj().T, np.eye(2), atol=1e-10)
        overlap = np.vdot(phi.amplitudes, V @ psi.amplitudes)
        self.assertGreaterEqual(abs(overlap), 1 - 1e-10)
        self.assertAlmostEqual(overlap.imag, 0.0, places=12)
        self.assertGreater(overlap.real, 0.0)

    def test_protected_axis_stays_fixed(self) -> None:
        protected = HermitianOperator(np.diag([0.0, 0.0, 1.0]))
        V = construct_assignment_unitary(make_state([1, 0, 0]), make_state([0, 1, 0]), [protected]).entries
        np.testing.assert_allclose(V[:, 2], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(V[2, :], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(np.abs(V @ [1, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_protected_overlap_rejected(self) -> None:
        protected = HermitianOperator(np.diag([1.0, 0.0, 0.0]))
        with self.assertRaises(ProtectedSectorViolation) as caught:
            construct_assignment_unitary(make_state([1, 1, 0]), make_state([0, 1, 0]), [protected])
        self.assertEqual(caught.exception.which, "psi")

    def test_strict_mode_keeps_energy_eigenspaces(self) -> None:
        H = HermitianOperator(np.diag([0.0, 0.0, 1.0]))
        psi, phi = make_state([1, 1, 1]), make_state([1, -1, 1])
        V = construct_assignment_unitary(psi, phi, mode="strict", hamiltonian=H).entries
        self.assertLess(float(np.max(np.abs(V @ H.entries - H.entries @ V))), 1e-9)
        self.assertGreaterEqual(abs(np.vdot(phi.amplitudes, V @ psi.amplitudes)), 1 - 1e-10)

    def test_strict_mode_refuses_energy_change(self) -> None:
        H = HermitianOperator(np.diag([0.0, 1.0]))
        with self.assertRaises(StrictModeUnsatisfiable):
            construct_assignment_unitary(make_state([1, 1]), make_state([1, 0]), mode="strict", hamiltonian=H)

    @settings(deadline=None, max_examples=40)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), dim=st.integers(min_value=2, max_value=12))
    def test_rotation_is_minimal(self, seed: int, dim: int) -> None:
        rng = np.random.default_rng(seed)
        psi = make_state(rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        phi = make_state(rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        V = construct_assignment_unitary(psi, phi).entries
        self.assertGreaterEqual(abs(np.vdot(phi.amplitudes, V @ psi.amplitudes)), 1 - 1e-10)
        # identity on the complement of span{psi, phi}
        plane, _ = np.linalg.qr(np.column_stack([psi.amplitudes, phi.amplitudes]))
        outside = np.eye(dim) - plane @ plane.conj().T
        np.testing.assert_allclose((V - np.eye(dim)) @ outside, 0.0, atol=1e-9)


class StepTests(unittest.TestCase):
    def setUp(self) -> None:
        self.schedule = compile_schedule(fresh_spin_config())

    def test_fresh_spin_forced_up(self) -> None:
        world = self.schedule.initial_world()
        successor, outcome = step(world, self.schedule.events[0], force_label=(0.0,))
        self.assertEqual(outcome.label, (0.0,))
        self.assertAlmostEqual(outcome.weight, 0.36, places=12)
        self.assertEqual(outcome.event_index, 0)
        self.assertEqual(self.schedule.events[0].outcome(outcome.label), "up")
        self.assertAlmostEqual(float(np.linalg.norm(successor.state.amplitudes)), 1.0, delta=1e-12)
        self.assertIsInstance(classify(successor.state, self.schedule.events[0].candidates), Definite)
        self.assertEqual(len(successor.ledger), 1)
        self.assertFalse(successor.ledger[0].trivial)

    def test_definite_state_is_a_no_op(self) -> None:
        world = bare_world(make_state([0, 0, 1, 0]))
        event = ScheduledEvent(time=1.0, candidates=qubit_z(0), name="observe")
        successor, outcome = step(world, event, trial_rng(1, 0))
        self.assertEqual(outcome.weight, 1.0)
        self.assertTrue(successor.ledger[0].trivial)
        np.testing.assert_allclose(successor.ledger[0].assignment_unitary.entries, np.eye(4))
        np.testing.assert_allclose(successor.state.amplitudes, world.state.amplitudes, atol=1e-12)

    def test_entangled_branch_becomes_product(self) -> None:
        entangled = make_state([1, 0, 0, 1])
        event = ScheduledEvent(time=1.0, candidates=qubit_z(1), name="pointer")
        for label, expected in (((1.0,), [1, 0, 0, 0]), ((-1.0,), [0, 0, 0, 1])):
            successor, outcome = step(bare_world(entangled), event, force_label=label)
            self.assertAlmostEqual(outcome.weight, 0.5, places=12)
            np.testing.assert_allclose(np.abs(successor.state.amplitudes), expected, atol=1e-12)
            self.assertEqual(schmidt_rank(successor.state, (2, 2), 1), 1)

    def test_repeated_observation_is_stable(self) -> None:
        world = self.schedule.initial_world()
        first, outcome = step(world, self.schedule.events[0], trial_rng(42, 3))
        again = ScheduledEvent(time=2.0, candidates=self.schedule.events[0].candidates, name="again")
        second, repeat = step(first, again, trial_rng(42, 4))
        self.assertEqual(repeat.label, outcome.label)
        self.assertEqual(repeat.weight, 1.0)
        self.assertTrue(second.ledger[1].trivial)

    def test_history_reproduces_state(self) -> None:
        world = self.schedule.initial_world()
        successor, _ = step(world, self.schedule.events[0], force_label=(1.0,))
        replayed = successor.history.entries @ world.state.amplitudes
        np.testing.assert_allclose(replayed, successor.state.amplitudes, atol=1e-10)

    def test_zero_weight_labels_leave_the_support(self) -> None:
        candidates = joint_eigenspace_decomposition([np.diag([0.0, 1.0, 2.0])])
        world = bare_world(make_state([1, 1, 0]))
        pending = prepare_step(world, ScheduledEvent(time=1.0, candidates=candidates))
        self.assertEqual(set(pending.support), {(0.0,), (1.0,)})
        self.assertAlmostEqual(pending.weights[(2.0,)], 0.0)

    def test_incomplete_candidates(self) -> None:
        partial = MacrostateDecomposition(
            labels=((0.0,),), projectors=(HermitianOperator(np.diag([1.0, 0.0])),), complete=False
        )
        with self.assertRaises(DecompositionError):
            step(bare_world(make_state([0.6, 0.8])), ScheduledEvent(time=1.0, candidates=partial), trial_rng(0, 0))

    def test_event_must_follow_world_time(self) -> None:
        world = self.schedule.initial_world()
        stale = ScheduledEvent(time=0.0, candidates=self.schedule.events[0].candidates)
        with self.assertRaises(ValueError):
            step(world, stale, trial_rng(0, 0))

    def test_needs_rng_or_forced_label(self) -> None:
        with self.assertRaises(ValueError):
            step(self.schedule.initial_world(), self.schedule.events[0])

    def test_strict_mode_cannot_assign_exchange_measurement(self) -> None:
        schedule = compile_schedule(conservation_config(mode="strict"))
        with self.assertRaises(StrictModeUnsatisfiable):
            step(schedule.initial_world(), schedule.events[0], force_label=(1.0,))

    def test_conserved_quantity_follows_the_assignment(self) -> None:
        schedule = compile_schedule(conservation_config())
        world = schedule.initial_world()
        before = expectation(world.state, world.unassigned[CONSERVED_NAME])
        for label in ((1.0,), (-1.0,)):
            successor, _ = step(world, schedule.events[0], force_label=label)
            after = expectation(successor.state, successor.unassigned[CONSERVED_NAME])
            self.assertAlmostEqual(after, before, delta=1e-9)


class SamplingTests(unittest.TestCase):
    def test_trial_streams_are_reproducible(self) -> None:
        first = trial_rng(42, 7).random(5)
        np.testing.assert_array_equal(first, trial_rng(42, 7).random(5))
        self.assertFalse(np.array_equal(first, trial_rng(42, 8).random(5)))
        self.assertFalse(np.array_equal(first, trial_rng(43, 7).random(5)))

    def test_trial_index_range(self) -> None:
        with self.assertRaises(ValueError):
            trial_rng(0, -1)

    def test_born_frequencies(self) -> None:
        weights = {(0.0,): 0.36, (1.0,): 0.64}
        draws = [sample_label(weights, trial_rng(5, trial)) for trial in range(20_000)]
        frequency = draws.count((0.0,)) / len(draws)
        # five standard errors
        self.assertAlmostEqual(frequency, 0.36, delta=5 * math.sqrt(0.36 * 0.64 / len(draws)))


class LedgerTests(unittest.TestCase):
    """Two events on a four-level system; the second propagator carries the
    state out of the macrostate assigned at the first."""

    def setUp(self) -> None:
        s = 1 / math.sqrt(2.0)
        carry = np.array(
            [[0, 0, 0, 1], [0, 1, 0, 0], [s, 0, s, 0], [s, 0, -s, 0]], dtype=complex
        )
        first = ScheduledEvent(
            time=1.0, candidates=joint_eigenspace_decomposition([np.diag([0.0, 0.0, 1.0, 1.0])]), name="first"
        )
        second = ScheduledEvent(
            time=2.0,
            candidates=joint_eigenspace_decomposition([np.diag([0.0, 0.0, 1.0, 2.0])]),
            name="second",
            propagator=UnitaryOperator(carry),
        )
        world = bare_world(make_state([1, 0, 1, 0]))
        world, _ = step(world, first, force_label=(0.0,))
        self.world, _ = step(world, second, force_label=(1.0,))

    def test_completed_run_verifies(self) -> None:
        verdict = verify_ledger(self.world)
        self.assertTrue(verdict)
        self.assertIsNone(verdict.event_index)
        earlier = self.world.ledger[0].candidates.projector((0.0,)).entries
        later = self.world.ledger[1].candidates.projector((1.0,)).entries
        np.testing.assert_allclose(earlier @ later, 0.0, atol=1e-9)

    def test_single_trivial_event_verifies(self) -> None:
        world, _ = step(
            bare_world(make_state([1, 0, 0, 0])),
            ScheduledEvent(time=1.0, candidates=qubit_z(0)),
            force_label=(1.0,),
        )
        self.assertTrue(world.ledger[0].trivial)
        self.assertTrue(verify_ledger(world))

    def test_later_unitary_rotating_earlier_record_fails(self) -> None:
        events = list(self.world.ledger.events)
        # swaps levels 1 and 3: fixes the second post-state, breaks the first macrostate
        swap = np.eye(4, dtype=complex)[[0, 3, 2, 1]]
        tampered = swap @ events[1].assignment_unitary.entries
        events[1] = dataclasses.replace(
            events[1],
            assignment_unitary=UnitaryOperator(tampered),
            post_state=StateVector(tampered @ events[1].pre_state.amplitudes),
        )
        broken = dataclasses.replace(self.world, ledger=AssignmentLedger(tuple(events)))
        with self.assertLogs("physim.physication", level="WARNING"):
            verdict = verify_ledger(broken)
        self.assertFalse(verdict)
        self.assertEqual(verdict.event_index, 1)
        self.assertIn("event 0", verdict.reason)

    def test_edited_weights_fail(self) -> None:
        events = list(self.world.ledger.events)
        events[0] = dataclasses.replace(events[0], born_weights={(0.0,): 0.4, (1.0,): 0.6})
        broken = dataclasses.replace(self.world, ledger=AssignmentLedger(tuple(events)))
        with self.assertLogs("physim.physication", level="WARNING"):
            verdict = verify_ledger(broken)
        self.assertEqual(verdict.event_index, 0)

    def test_ledger_rejects_earlier_time(self) -> None:
        with self.assertRaises(ValueError):
            self.world.ledger.appended(self.world.ledger[0])

    def test_second_assignment_inside_assigned_macrostate_is_refused(self) -> None:
        world = bare_world(make_state([1, 1, 1, 1]))
        world, _ = step(world, ScheduledEvent(time=1.0, candidates=qubit_z(0)), force_label=(1.0,))
        with self.assertRaises(UnphysicatedSectorExhausted) as caught:
            step(world, ScheduledEvent(time=2.0, candidates=qubit_z(1), name="again"), force_label=(1.0,))
        self.assertEqual(caught.exception.event_index, 1)
        self.assertEqual(caught.exception.event_name, "again")


class NormTests(unittest.TestCase):
    @settings(deadline=None, max_examples=30)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), dim=st.integers(min_value=2, max_value=10))
    def test_random_event_keeps_unit_norm(self, seed: int, dim: int) -> None:
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        H = HermitianOperator(0.5 * (raw + raw.conj().T))
        values = rng.integers(0, 3, size=dim).astype(float)
        candidates = joint_eigenspace_decomposition([np.diag(values)])
        world = bare_world(make_state(rng.standard_normal(dim) + 1j * rng.standard_normal(dim)), H)
        successor, _ = step(world, ScheduledEvent(time=0.7, candidates=candidates), rng)
        self.assertAlmostEqual(float(np.linalg.norm(successor.state.amplitudes)), 1.0, delta=1e-10)
        np.testing.assert_allclose(
            successor.history.entries @ world.state.amplitudes, successor.state.amplitudes, atol=1e-9
        )
        self.assertIsInstance(classify(successor.state, candidates), Definite)


if __name__ == "__main__":
    unittest.main()
