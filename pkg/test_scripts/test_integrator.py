import numpy as np
import pytest
from pydantic import ValidationError

from app.certificates import hhk_certificate
from app.controllers import (
    ConstantDelta,
    GeneralPerturbedControl,
    LeaderControl,
    NoControl,
    UniformControl,
    WeightedPerturbationControl,
    compute_control,
)
from app.experiments import generate_ic, rescale_ic
from app.flock import FlockState, PowerLawKernel, deviation_energy, dispersion
from app.integrator import (
    IntegrationBlowupError,
    SimConfig,
    decay_monitor,
    rhs,
    rk4_increment,
    rk4_step,
    simulate,
)
from flock_factory import consensus_state, line_state, random_state

KERNEL = PowerLawKernel(delta=1.0)


def test_rhs_consensus_state_has_no_acceleration():
    _, dv = rhs(consensus_state(5), KERNEL, NoControl())
    np.testing.assert_allclose(dv, 0.0, atol=1e-15)


@pytest.mark.parametrize("positions, expected", [([0.0, 0.0], -1.0), ([0.0, 2.0], -0.2)])
def test_rhs_two_agents(positions, expected):
    dx, dv = rhs(line_state(positions, [1.0, -1.0]), KERNEL, NoControl())
    np.testing.assert_array_equal(dx, [[1.0], [-1.0]])
    assert dv[0, 0] == pytest.approx(expected)
    assert dv[1, 0] == pytest.approx(-expected)


def test_rk4_increment_linear_decay():
    y = rk4_increment(lambda t, y: -y, 0.0, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-12)


def test_rk4_step_reproduces_linear_decay_on_flock():
    # with delta = 0 and N = 2 each velocity obeys v' = -v
    state = line_state([0.0, 3.0], [1.0, -1.0])
    stepped = rk4_step(state, PowerLawKernel(delta=0.0), NoControl(), 0.1)
    assert stepped.velocities[0, 0] == pytest.approx(0.9048375, abs=1e-12)


def test_rk4_fixed_points():
    still = FlockState(np.random.default_rng(0).normal(size=(4, 2)), np.zeros((4, 2)))
    stepped = rk4_step(still, KERNEL, NoControl(), 0.1)
    np.testing.assert_array_equal(stepped.positions, still.positions)

    moving = consensus_state(4, velocity=[0.5, -2.0])
    stepped = rk4_step(moving, KERNEL, UniformControl(gamma=1.0), 0.1)
    np.testing.assert_allclose(stepped.positions, moving.positions + 0.1 * moving.velocities, atol=1e-15)
    np.testing.assert_allclose(stepped.velocities, moving.velocities, atol=1e-15)


def test_rk4_step_reports_blowup():
    huge = GeneralPerturbedControl(alpha=0.0, beta=1.0, delta=ConstantDelta(vector=[1e308]))
    state = line_state([0.0, 1.0], [1e308, 1e308])
    with pytest.raises(IntegrationBlowupError) as info:
        rk4_step(state, KERNEL, huge, 1.0, step=7)
    assert info.value.step == 7


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(dt=2.0, T=1.0)
    with pytest.raises(ValidationError):
        SimConfig(dt=0.0)
    with pytest.raises(ValidationError):
        SimConfig(dt=0.1, T=0.25)
    assert SimConfig(dt=0.01, T=20.0).n_steps == 2000


def test_simulate_records_on_stride_and_at_the_end():
    config = SimConfig(dt=0.1, T=1.1, record_stride=4)
    trajectory = simulate(random_state(3), KERNEL, NoControl(), config)
    # 11 steps: recorded at 0, 4, 8 and the final step 11
    np.testing.assert_allclose(trajectory.times, [0.0, 0.4, 0.8, 1.1])
    assert trajectory.mean_velocity_series.shape == (4, 2)
    assert trajectory.snapshots is None


def test_uniform_control_decays_within_envelope():
    T = 5.0
    config = SimConfig(dt=0.01, T=T, record_stride=5)
    initial = random_state(10, 2, seed=21)
    trajectory = simulate(initial, KERNEL, UniformControl(gamma=1.0), config)
    V = trajectory.V_series
    assert np.all(np.diff(V) <= 1e-12 * V[0])
    assert V[-1] <= V[0] * np.exp(-2.0 * T) * (1.0 + 1e-6)
    assert trajectory.consensus


def test_leader_control_decays_faster_for_larger_weight():
    initial = random_state(100, 2, seed=13)
    crossings = []
    for q in (0.1, 0.5, 1.0):
        trajectory = simulate(initial, KERNEL, LeaderControl(gamma=1.0, q=q), SimConfig(dt=0.05, T=60.0))
        envelope = trajectory.V_series[0] * np.exp(-2.0 * q * trajectory.times)
        assert np.all(trajectory.V_series <= envelope * (1.0 + 1e-4))
        assert trajectory.first_crossing_time is not None
        crossings.append(trajectory.first_crossing_time)
    assert crossings[0] > crossings[1] > crossings[2]


def test_leader_is_never_steered():
    controller = LeaderControl(gamma=1.0, q=0.5, leader_index=3)
    config = SimConfig(dt=0.05, T=2.0, record_stride=4, record_snapshots=True)
    trajectory = simulate(random_state(6, 2, seed=2), KERNEL, controller, config)
    for t, snap in zip(trajectory.times, trajectory.snapshots):
        np.testing.assert_array_equal(compute_control(snap, controller, float(t))[3], 0.0)


def test_rk4_is_fourth_order():
    initial = random_state(4, 2, seed=1, scale=2.0)

    def final_V(dt):
        return deviation_energy(simulate(initial, KERNEL, NoControl(), SimConfig(dt=dt, T=1.0)).final_state.velocities)

    reference = final_V(0.001)
    coarse, fine = abs(final_V(0.02) - reference), abs(final_V(0.01) - reference)
    assert coarse / fine >= 12.0


@pytest.mark.parametrize("controller", [NoControl(), UniformControl(gamma=2.0)], ids=["none", "uniform"])
def test_mean_velocity_is_conserved(controller):
    T = 4.0
    initial = random_state(8, 2, seed=5, scale=2.0)
    trajectory = simulate(initial, KERNEL, controller, SimConfig(dt=0.02, T=T))
    drift = np.linalg.norm(trajectory.mean_velocity_series[-1] - trajectory.mean_velocity_series[0])
    assert drift <= 1e-10 * T * np.abs(initial.velocities).max()


def test_constant_perturbation_moves_mean_velocity():
    controller = GeneralPerturbedControl(alpha=1.0, beta=0.5, delta=ConstantDelta(vector=[1.0, 0.0]))
    initial = random_state(4, 2, seed=6)
    trajectory = simulate(initial, KERNEL, controller, SimConfig(dt=0.01, T=2.0))
    drift = trajectory.mean_velocity_series[-1] - trajectory.mean_velocity_series[0]
    np.testing.assert_allclose(drift, [1.0, 0.0], atol=1e-10)


def test_consensus_initial_condition_stays_in_consensus():
    trajectory = simulate(consensus_state(5), KERNEL, NoControl(), SimConfig(dt=0.05, T=2.0))
    assert np.all(trajectory.V_series <= 1e-28)
    assert trajectory.consensus
    assert trajectory.first_crossing_time == 0.0


def test_certified_initial_condition_reaches_consensus():
    raw = generate_ic(2, 1, 3)
    lhs = hhk_certificate(2, 1.0, 0.0, KERNEL).lhs
    initial = rescale_ic(raw, 1.0, 0.3 * lhs * lhs)
    trajectory = simulate(initial, KERNEL, NoControl(), SimConfig(dt=0.05, T=200.0, record_stride=100))
    assert trajectory.consensus
    assert trajectory.first_crossing_time is not None
    assert dispersion(trajectory.final_state).V <= 1e-5


def test_decay_monitor_uniform_control():
    config = SimConfig(dt=0.01, T=2.0, record_stride=1, record_snapshots=True)
    trajectory = simulate(random_state(6, 2, seed=2), KERNEL, UniformControl(gamma=1.0), config)
    report = decay_monitor(trajectory, KERNEL, UniformControl(gamma=1.0))
    assert not report.coarse
    assert report.weighted_bound is None
    assert np.all(report.residual <= 1e-3 * trajectory.V_series + 1e-12)


def test_decay_monitor_weighted_control():
    controller = WeightedPerturbationControl(alpha=1.0, beta=1.0, epsilon=1.0)
    config = SimConfig(dt=0.01, T=2.0, record_stride=1, record_snapshots=True)
    trajectory = simulate(random_state(5, 2, seed=3), KERNEL, controller, config)
    report = decay_monitor(trajectory, KERNEL, controller)
    slack = 1e-3 * trajectory.V_series + 1e-12
    assert np.all(report.residual <= slack)
    assert np.all(report.dV_dt <= report.weighted_bound + slack)


def test_decay_monitor_consensus_state():
    config = SimConfig(dt=0.01, T=0.1, record_stride=1, record_snapshots=True)
    trajectory = simulate(consensus_state(4), KERNEL, NoControl(), config)
    report = decay_monitor(trajectory, KERNEL, NoControl())
    np.testing.assert_allclose(report.dV_dt, 0.0, atol=1e-25)
    np.testing.assert_allclose(report.bound, 0.0, atol=1e-25)


def test_decay_monitor_needs_snapshots():
    trajectory = simulate(random_state(3), KERNEL, NoControl(), SimConfig(dt=0.1, T=1.0))
    with pytest.raises(ValueError):
        decay_monitor(trajectory, KERNEL, NoControl())


def test_decay_monitor_flags_coarse_recording():
    config = SimConfig(dt=0.05, T=1.0, record_stride=4, record_snapshots=True)
    trajectory = simulate(random_state(3), KERNEL, NoControl(), config)
    assert decay_monitor(trajectory, KERNEL, NoControl()).coarse
