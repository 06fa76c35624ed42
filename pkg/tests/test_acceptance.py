"""Acceptance suite: eight pinned criteria, one test (and one pass/fail
line under `pytest -v`) per criterion.

Criteria 1, 2, and 7 share one closed-loop tracking study built once per
module: a 1 s, 1001-knot single-bounce reference from 4 m to 2.5 m, then a
receding-horizon run at every knot from a perturbed start, once with the
event-driven cost update and once without it. The remaining criteria are
small-instance oracle checks that run in well under a second each.

Tolerances in this file are pinned; loosening them is not an option.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from hilqr.checks import (
    check_gradient,
    check_riccati,
    check_saltation_oracle,
    check_saltation_second_order,
)
from hilqr.cost import CostModel
from hilqr.mpc import (
    ForceWeightConfig,
    MpcConfig,
    TrackingProblem,
    force_weighted_penalty,
    force_weights,
    mpc_step,
    run_mpc,
)
from hilqr.simulate import rollout
from hilqr.solver import SolveOptions, solve
from hilqr.systems import (
    IMPACT,
    BouncingBallParams,
    bouncing_ball,
    classify_ball_mode,
    double_integrator,
    make_single_bounce_reference,
)

# --- pinned study configuration ------------------------------------------
DT = 1e-3
DURATION = 1.0                      # 1001 knots
X_START = [4.0, 0.0]
X_GOAL = [2.5, 0.0]
PERTURBATION = np.array([-0.6, 0.0])  # meters, applied to z at knot 0
STATE_WEIGHT = np.diag([2000.0, 20.0])
INPUT_WEIGHT = np.array([[0.05]])
MPC = MpcConfig(
    horizon=50,
    threshold=1e-4,                 # convergence cut-off on expected reduction
    max_iterations=15,
    batch_width=9,
    extension_horizon=150,
    warm_start=True,
    parallel=True,
)
IMPACT_ZONE = 100                   # knots (0.1 s) either side of the impact
RUNTIME_BUDGET_S = 600.0


@pytest.fixture(scope="module")
def study():
    """Reference + the two closed-loop runs shared by criteria 1, 2, 7."""
    t0 = time.perf_counter()
    params = BouncingBallParams()
    plant = bouncing_ball(params)
    reference, extensions, _, ref_report = make_single_bounce_reference(
        params, X_START, X_GOAL, DURATION, DT,
        extension_horizon=MPC.extension_horizon,
    )

    logs = {}
    for update in (True, False):
        problem = TrackingProblem(
            system=plant, reference=reference, extensions=extensions,
            q=STATE_WEIGHT, r=INPUT_WEIGHT, q_n=STATE_WEIGHT,
            cost_update=update,
        )
        logs[update] = run_mpc(
            problem, plant, reference.states[0], MPC, disturbance=PERTURBATION
        )
    return {
        "params": params,
        "plant": plant,
        "reference": reference,
        "extensions": extensions,
        "ref_report": ref_report,
        "log_on": logs[True],
        "log_off": logs[False],
        "elapsed": time.perf_counter() - t0,
    }


def _impact_knot(traj) -> int:
    return next(
        k for k, ev in traj.events if (ev.source, ev.target) == IMPACT
    )


def test_criterion_1_mode_mismatch_ablation(study):
    reference = study["reference"]
    assert study["ref_report"].converged
    assert reference.n_steps == 1000          # 1001 knots
    assert reference.times[-1] == pytest.approx(1.0)
    impacts = [
        k for k, ev in reference.events if (ev.source, ev.target) == IMPACT
    ]
    assert len(impacts) == 1                  # single-bounce reference

    log_on, log_off = study["log_on"], study["log_off"]
    assert log_on.n_solves == log_off.n_solves == 1001  # one solve per knot
    assert MPC.threshold == 1e-4

    fails_on = log_on.n_nonconverged
    fails_off = log_off.n_nonconverged
    elapsed = study["elapsed"]
    print(
        f"criterion 1: non-converged with update {fails_on}, "
        f"without {fails_off}, runtime {elapsed:.0f}s"
    )
    assert fails_on == 0
    assert fails_off >= 1
    assert elapsed < RUNTIME_BUDGET_S


def test_criterion_2_tracking_quality(study):
    log_on, log_off = study["log_on"], study["log_off"]
    z_final, zdot_final = log_on.states[-1]

    knot = _impact_knot(study["reference"])
    zone = slice(max(knot - IMPACT_ZONE, 0), knot + IMPACT_ZONE)
    peak_on = float(np.max(np.abs(log_on.inputs[zone])))
    peak_off = float(np.max(np.abs(log_off.inputs[zone])))

    print(
        f"criterion 2: final ({z_final:.4f}, {zdot_final:.4f}), "
        f"peak near impact {peak_on:.2f} vs {peak_off:.2f} "
        f"(ratio {peak_off / peak_on:.2f})"
    )
    assert abs(z_final - 2.5) <= 0.05
    assert abs(zdot_final) <= 0.1
    assert peak_off >= 5.0 * peak_on


def test_criterion_3_saltation_correctness():
    oracle = check_saltation_oracle(seed=0, inject_fault=None)
    slope = check_saltation_second_order(seed=0)
    print(
        f"criterion 3: worst relative error {oracle.measured:.3e} over 100 "
        f"states, remainder slope {slope.measured:.3f}"
    )
    assert oracle.measured <= 1e-8
    assert abs(slope.measured - 2.0) <= 0.2


def test_criterion_4_smooth_regression():
    riccati = check_riccati(seed=0)
    assert riccati.measured <= 1e-6

    n_steps = 100
    cost = CostModel(
        x_ref=np.zeros((n_steps + 1, 2)),
        u_ref=np.zeros((n_steps, 1)),
        q=np.diag([1.0, 0.1]),
        r=np.array([[0.1]]),
        q_n=np.diag([10.0, 1.0]),
    )
    _, _, report = solve(
        double_integrator(1.0), cost,
        (np.array([1.0, 0.0]), 0, np.zeros((n_steps, 1)), 0.01),
        SolveOptions(),
    )
    print(
        f"criterion 4: Riccati gain error {riccati.measured:.3e}, "
        f"LQ solve iterations {report.iterations}"
    )
    assert report.converged
    assert report.iterations <= 2


def test_criterion_5_hybrid_gradient_check():
    with_update, ablated = check_gradient(seed=0)
    print(
        f"criterion 5: gradient error {with_update.measured:.3e} with the "
        f"event correction, {ablated.measured:.3e} without"
    )
    assert with_update.measured <= 1e-4
    assert ablated.passed            # "passed" == the ablation broke the check
    assert ablated.measured > 1e-2


def test_criterion_6_simulator_invariants():
    params = BouncingBallParams()
    plant = bouncing_ball(params)
    n_steps = 2500                   # 2.5 s: two impacts from a 4 m drop
    traj = rollout(
        plant, np.array([4.0, 0.0]), classify_ball_mode([4.0, 0.0]),
        np.zeros((n_steps, 1)), DT,
    )
    impacts = [
        (k, ev) for k, ev in traj.events if (ev.source, ev.target) == IMPACT
    ]
    assert len(impacts) >= 2

    def energy(x):
        return 0.5 * params.mass * x[1] ** 2 + params.mass * params.gravity * x[0]

    first = impacts[0][1]
    speed_expected = np.sqrt(2.0 * params.gravity * 4.0)
    speed_err = abs(-first.x_pre[1] - speed_expected) / speed_expected

    worst_restitution = 0.0
    worst_residual = 0.0
    worst_energy_gain = 0.0
    for _, ev in impacts:
        worst_restitution = max(
            worst_restitution,
            abs(ev.x_post[1] / ev.x_pre[1] + params.restitution),
        )
        worst_residual = max(worst_residual, abs(ev.x_pre[0]))
        worst_energy_gain = max(
            worst_energy_gain, energy(ev.x_post) - energy(ev.x_pre)
        )

    print(
        f"criterion 6: impact speed error {speed_err:.2e}, restitution error "
        f"{worst_restitution:.2e}, guard residual {worst_residual:.2e}, "
        f"max energy gain {worst_energy_gain:.2e}"
    )
    assert speed_err <= 1e-8
    assert worst_restitution <= 1e-9
    assert worst_residual <= 1e-10
    assert worst_energy_gain <= 0.0 + 1e-12


def test_criterion_7_parallel_line_search(study):
    reference = study["reference"]
    plant = study["plant"]
    problem = TrackingProblem(
        system=plant, reference=reference, extensions=study["extensions"],
        q=STATE_WEIGHT, r=INPUT_WEIGHT, q_n=STATE_WEIGHT, cost_update=True,
    )
    rng = np.random.default_rng(7)
    sequential = replace(MPC, parallel=False)
    for trial in range(20):
        k = int(rng.integers(0, reference.n_steps + 1))
        x = reference.states[k] + rng.uniform(-0.1, 0.1, size=2)
        x[0] = max(x[0], 0.02)       # stay inside the z >= 0 domain
        mode = classify_ball_mode(x)
        sol_p = mpc_step(problem, x, mode, k, None, MPC)
        sol_s = mpc_step(problem, x, mode, k, None, sequential)
        assert sol_p.report.final_cost == sol_s.report.final_cost  # bitwise
        assert sol_p.report.accepted_alphas == sol_s.report.accepted_alphas
        np.testing.assert_array_equal(sol_p.plan.states, sol_s.plan.states)
        np.testing.assert_array_equal(sol_p.first_input, sol_s.first_input)

    n_histories = 0
    for log in (study["log_on"], study["log_off"]):
        for report in log.reports:
            hist = report.cost_history
            assert all(b <= a for a, b in zip(hist, hist[1:]))
            n_histories += 1
    print(
        f"criterion 7: 20/20 parallel-sequential pairs bit-identical, "
        f"{n_histories} accepted-cost sequences non-increasing"
    )


def test_criterion_8_force_weighted_penalty():
    # dyadic r_min/r_max make every expected value float-exact
    cfg = ForceWeightConfig(
        r_min=np.diag([0.5, 0.5, 0.5, 0.5]),
        r_max=np.diag([2.0, 2.0, 2.0, 2.0]),
        legs=((0,), (1,), (2,), (3,)),
    )

    pens = force_weighted_penalty(np.array([1.0, 0.0, 0.0, 0.0]), cfg)
    assert np.array_equal(pens[0], cfg.r_min)
    for j in (1, 2, 3):
        assert np.array_equal(pens[j], cfg.r_max)

    pens = force_weighted_penalty(np.array([1.0, 1.0, 1.0, 1.0]), cfg)
    uniform = cfg.r_max - 0.25 * (cfg.r_max - cfg.r_min)
    for j in range(4):
        assert np.array_equal(pens[j], uniform)

    pens = force_weighted_penalty(np.array([3.0, 1.0, 0.0, 0.0]), cfg)
    assert np.array_equal(
        force_weights(np.array([3.0, 1.0, 0.0, 0.0])),
        np.array([0.75, 0.25, 0.0, 0.0]),
    )
    assert np.array_equal(pens[0], cfg.r_max - 0.75 * (cfg.r_max - cfg.r_min))
    assert np.array_equal(pens[1], cfg.r_max - 0.25 * (cfg.r_max - cfg.r_min))
    assert np.array_equal(pens[2], cfg.r_max)
    assert np.array_equal(pens[3], cfg.r_max)

    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        lam = rng.uniform(0.0, 100.0, size=4)
        lam[rng.random(4) < 0.25] = 0.0      # exercise zero entries
        if lam.sum() == 0.0:
            lam[0] = 1.0
        worst = max(worst, abs(force_weights(lam).sum() - 1.0))
    print(
        f"criterion 8: three pinned examples exact, worst |sum(w) - 1| = "
        f"{worst:.2e} over 1000 draws"
    )
    assert worst <= 1e-12
