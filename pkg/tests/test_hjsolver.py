import numpy as np
import pytest
from hypothesis import given, strategies as st

from swingreach.grid import GridSpec, ScalarField, extract_zero_contour, field_from_function, make_field
from swingreach.hjsolver import (
    LAX_FRIEDRICHS,
    SEMI_LAGRANGIAN,
    CFLViolation,
    ConstantFlow,
    DisturbanceBound,
    NumericalBlowup,
    Quantifier,
    SmibDynamics,
    SolveConfig,
    SolveContext,
    cfl_limit,
    hamiltonian,
    lf_dissipation,
    lf_numerical_hamiltonian,
    optimal_disturbance,
    solve,
    step_backward,
)
from swingreach.plant import RelayStatus, SafeBounds, SmibParams
from swingreach.reachability import safe_set_field

P = SmibParams()
INF, SUP = Quantifier.INF, Quantifier.SUP
B02 = DisturbanceBound.symmetric(0.2)
COARSE = GridSpec(n_delta=61, n_omega=61)
SAFE = SafeBounds.nominal(P)


def test_disturbance_bound_validation():
    with pytest.raises(ValueError):
        DisturbanceBound(0.3, 0.1)
    assert DisturbanceBound().endpoints == (0.0,)
    assert B02.endpoints == (-0.2, 0.2)
    assert B02.clamp(0.5) == 0.2 and B02.clamp(-0.5) == -0.2


def test_candidates_nested_on_lattice():
    assert DisturbanceBound.symmetric(0.1).candidates(0.05) == (-0.1, -0.05, 0.0, 0.05, 0.1)
    assert DisturbanceBound(-0.12, 0.07).candidates(0.05) == (-0.12, -0.1, -0.05, 0.0, 0.05, 0.07)
    assert DisturbanceBound().candidates(0.05) == (0.0,)
    assert DisturbanceBound.symmetric(0.3).candidates(None) == (-0.3, 0.3)
    for a, b in [(0.1, 0.15), (0.15, 0.7), (0.35, 0.4)]:
        assert set(DisturbanceBound.symmetric(a).candidates(0.05)) <= set(DisturbanceBound.symmetric(b).candidates(0.05))


def test_optimal_disturbance_tie_goes_to_le_branch():
    assert optimal_disturbance(0.0, B02, INF) == 0.2
    assert optimal_disturbance(0.0, B02, SUP) == -0.2
    assert optimal_disturbance(-1.0, B02, INF) == 0.2
    assert optimal_disturbance(1.0, B02, INF) == -0.2


def test_hamiltonian_examples():
    dyn = SmibDynamics(P, RelayStatus.CLOSED)
    # degenerate interval: quantifier irrelevant
    a = hamiltonian(0.3, -0.7, 0.4, 1.0, dyn, DisturbanceBound(), INF)
    b = hamiltonian(0.3, -0.7, 0.4, 1.0, dyn, DisturbanceBound(), SUP)
    assert a == b
    # p = (0, 1), inf picks d = -0.2
    fd, fw = dyn.drift(0.4, 1.0)
    assert hamiltonian(0.0, 1.0, 0.4, 1.0, dyn, B02, INF) == pytest.approx(fw - 0.2 / P.M)
    # p = (1, 0): value is omega regardless of d
    for q in (INF, SUP):
        assert hamiltonian(1.0, 0.0, 0.2, 3.0, dyn, B02, q) == pytest.approx(3.0)


@given(pd=st.floats(-50, 50), pw=st.floats(-50, 50), x=st.floats(-3, 6), w=st.floats(-20, 20),
       lo=st.floats(-1, 0), hi=st.floats(0, 1))
def test_hamiltonian_matches_brute_force(pd, pw, x, w, lo, hi):
    dyn = SmibDynamics(P, RelayStatus.OPEN)
    db = DisturbanceBound(lo, hi)
    ds = np.linspace(lo, hi, 41)
    vals = [pd * f[0] + pw * f[1] for f in (dyn.velocity(x, w, d) for d in ds)]
    assert hamiltonian(pd, pw, x, w, dyn, db, INF) == pytest.approx(min(vals), rel=1e-9, abs=1e-6)
    assert hamiltonian(pd, pw, x, w, dyn, db, SUP) == pytest.approx(max(vals), rel=1e-9, abs=1e-6)


def test_lf_dissipation_term_wise_bound():
    spec = GridSpec()
    a = lf_dissipation(SmibDynamics(P, RelayStatus.OPEN), DisturbanceBound(), spec)
    assert a[0] == 20.0
    assert a[1] == pytest.approx((1 + 0.12 * 20 + 1.35) / 0.026)
    wider = lf_dissipation(SmibDynamics(P, RelayStatus.OPEN), B02, spec)
    assert wider[1] - a[1] == pytest.approx(0.2 / 0.026)


def test_cfl_limit_and_violation():
    ctx = SolveContext(COARSE, SmibDynamics(P, RelayStatus.OPEN), B02, INF, LAX_FRIEDRICHS)
    limit = cfl_limit(ctx.alpha, COARSE, 0.5)
    assert limit == pytest.approx(0.5 / (ctx.alpha[0] / COARSE.h_delta + ctx.alpha[1] / COARSE.h_omega))
    V = safe_set_field(SAFE, COARSE)
    step_backward(V, limit, ctx)
    with pytest.raises(CFLViolation):
        step_backward(V, 1.01 * limit, ctx)


@pytest.mark.parametrize("scheme", [SEMI_LAGRANGIAN, LAX_FRIEDRICHS])
def test_constant_field_unchanged(scheme):
    ctx = SolveContext(COARSE, SmibDynamics(P, RelayStatus.OPEN), B02, INF, scheme)
    V = make_field(COARSE, 0.7)
    new = step_backward(V, 1e-4, ctx).values
    # semi-Lagrangian weights may sum to 1 - ulp
    assert np.all(new <= V.values)
    assert np.max(np.abs(new - V.values)) <= 1e-15


def test_lf_single_step_matches_direct_evaluation():
    ctx = SolveContext(COARSE, SmibDynamics(P, RelayStatus.CLOSED), B02, INF, LAX_FRIEDRICHS)
    V = safe_set_field(SAFE, COARSE)
    dt = 0.5 * ctx.max_dt
    h = lf_numerical_hamiltonian(V.values, ctx)
    new = step_backward(V, dt, ctx).values
    assert np.array_equal(new, V.values + dt * np.minimum(0.0, h))
    assert np.array_equal(new < V.values, h < 0)


@pytest.mark.parametrize("scheme", [SEMI_LAGRANGIAN, LAX_FRIEDRICHS])
def test_freezing_step_never_increases(scheme):
    rng = np.random.default_rng(0)
    ctx = SolveContext(COARSE, SmibDynamics(P, RelayStatus.OPEN), B02, SUP, scheme)
    V = ScalarField(COARSE, rng.normal(size=COARSE.shape))
    dt = 0.02 if scheme == SEMI_LAGRANGIAN else ctx.max_dt
    assert np.all(step_backward(V, dt, ctx).values <= V.values)


def test_zero_horizon_returns_terminal_condition():
    l = safe_set_field(SAFE, COARSE)
    res = solve(l, SmibDynamics(P, RelayStatus.OPEN), DisturbanceBound(), INF, SolveConfig(horizon=0.0))
    assert np.array_equal(res.final.values, l.values)


@pytest.mark.parametrize("scheme", [SEMI_LAGRANGIAN, LAX_FRIEDRICHS])
def test_quantifier_ordering(scheme):
    l = safe_set_field(SAFE, COARSE)
    cfg = SolveConfig(horizon=0.5, scheme=scheme)
    dyn = SmibDynamics(P, RelayStatus.OPEN)
    lo = solve(l, dyn, B02, INF, cfg).final.values
    hi = solve(l, dyn, B02, SUP, cfg).final.values
    assert np.all(lo <= hi)


def test_disturbance_width_monotonicity():
    l = safe_set_field(SAFE, COARSE)
    cfg = SolveConfig(horizon=1.0)
    dyn = SmibDynamics(P, RelayStatus.CLOSED)
    narrow, wide = DisturbanceBound.symmetric(0.1), DisturbanceBound.symmetric(0.3)
    assert np.all(solve(l, dyn, wide, INF, cfg).final.values <= solve(l, dyn, narrow, INF, cfg).final.values)
    assert np.all(solve(l, dyn, wide, SUP, cfg).final.values >= solve(l, dyn, narrow, SUP, cfg).final.values)


def test_runs_share_common_prefix_exactly():
    l = safe_set_field(SAFE, COARSE)
    dyn = SmibDynamics(P, RelayStatus.CLOSED)
    short = solve(l, dyn, B02, INF, SolveConfig(horizon=1.0, stop_on_convergence=False))
    long = solve(l, dyn, B02, INF, SolveConfig(horizon=2.0, snapshot_times=(1.0,), stop_on_convergence=False))
    assert np.array_equal(short.final.values, long.snapshots[1.0].values)


def test_snapshots_and_checkpoints_recorded():
    l = safe_set_field(SAFE, COARSE)
    res = solve(l, SmibDynamics(P, RelayStatus.OPEN), B02, INF,
                SolveConfig(horizon=1.0, snapshot_times=(0.0, 0.3, 0.6), stop_on_convergence=False))
    assert sorted(res.snapshots) == [0.0, 0.3, 0.6]
    assert [cp.tau for cp in res.checkpoints] == [0.25, 0.5, 0.75, 1.0]
    assert res.tau_final == 1.0


def test_convergence_detected_for_static_problem():
    l = make_field(COARSE, 1.0)
    res = solve(l, ConstantFlow(1.0, 0.0), DisturbanceBound(), INF, SolveConfig(horizon=2.0))
    assert res.converged_at == 0.25
    assert res.tau_final == 0.25


def test_blowup_is_reported():
    class Exploding(ConstantFlow):
        def drift(self, delta, omega):
            return np.full_like(delta, np.nan), np.zeros_like(omega)

    l = field_from_function(COARSE, lambda d, w: d)
    with pytest.raises(NumericalBlowup):
        solve(l, Exploding(0.0, 0.0), DisturbanceBound(), INF, SolveConfig(horizon=0.1))


def _advected_circle(scheme):
    spec = GridSpec(-3.0, 3.0, -3.0, 3.0, 121, 121)
    l = field_from_function(spec, lambda d, w: 1.0 - np.hypot(d, w))
    cfg = SolveConfig(horizon=1.0, scheme=scheme, freeze=False, stop_on_convergence=False)
    res = solve(l, ConstantFlow(1.0, 0.0), DisturbanceBound(), INF, cfg)
    return spec, extract_zero_contour(res.final).vertices()


@pytest.mark.parametrize("scheme", [SEMI_LAGRANGIAN, LAX_FRIEDRICHS])
def test_constant_advection_translates_circle(scheme):
    # V(x, tau) = l(x + tau f): the unit circle moves to centre (-1, 0)
    spec, pts = _advected_circle(scheme)
    r = np.hypot(pts[:, 0] + 1.0, pts[:, 1])
    assert np.max(np.abs(r - 1.0)) <= 2 * spec.h_max
    centre = pts.mean(axis=0)
    assert abs(centre[0] + 1.0) <= 2 * spec.h_max and abs(centre[1]) <= 2 * spec.h_max


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(scheme="weno")
    with pytest.raises(ValueError):
        SolveConfig(cfl=1.5)
    with pytest.raises(ValueError):
        SolveConfig(convergence_eps=0.0)
    with pytest.raises(ValueError):
        SolveConfig(horizon=-1.0)
