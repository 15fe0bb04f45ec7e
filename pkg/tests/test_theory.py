import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocopnp.denoisers import symmetric_linear_denoiser
from cocopnp.errors import ValidationError
from cocopnp.theory import (
    ModulusReport,
    TheoryParams,
    admm_margin,
    cubic_value,
    moduli,
    pegd_step_bound,
    solve_t0,
    verify_prox_property,
    weak_convexity_modulus,
)


def grid_scan_root(gamma, n=2_000_001):
    ts = np.linspace(0.0, 1.0, n)
    vals = (2 - 2 * gamma) * ts**3 + gamma * ts**2 + 2 * gamma * ts - gamma
    idx = np.searchsorted(np.sign(vals), 1.0)
    return ts[idx]


def test_theory_params_validation():
    TheoryParams(gamma=1.0, t=0.0, beta=2.0)
    with pytest.raises(ValidationError):
        TheoryParams(gamma=0.0, t=0.2, beta=1.0)
    with pytest.raises(ValidationError):
        TheoryParams(gamma=1.2, t=0.2, beta=1.0)
    with pytest.raises(ValidationError):
        TheoryParams(gamma=0.5, t=1.0, beta=1.0)
    with pytest.raises(ValidationError):
        TheoryParams(gamma=0.5, t=0.2, beta=0.0)


def test_cubic_value_signs():
    for gamma in (0.1, 0.25, 0.5, 0.9):
        assert cubic_value(0.0, gamma) == -gamma
        assert cubic_value(1.0, gamma) == pytest.approx(2.0, abs=1e-12)


@given(gamma=st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_solve_t0_is_a_root_in_range(gamma):
    t0 = solve_t0(gamma)
    assert 0.0 < t0 < 1.0
    assert abs(cubic_value(t0, gamma)) <= 1e-9


def test_solve_t0_against_grid_scan():
    for gamma in (0.1, 0.25, 0.4, 0.5, 0.75, 0.9):
        t0 = solve_t0(gamma)
        assert abs(t0 - grid_scan_root(gamma)) <= 1e-6


def test_solve_t0_rejects_gamma_one():
    with pytest.raises(ValidationError):
        solve_t0(1.0)
    with pytest.raises(ValidationError):
        solve_t0(0.0)


def test_weak_convexity_modulus_formula():
    # r = beta t (1-gamma) / (t + gamma - gamma t)
    assert weak_convexity_modulus(0.5, 0.0, 1.0) == 0.0
    val = weak_convexity_modulus(0.25, 0.2, 1.0)
    assert abs(val - (0.2 * 0.75) / (0.2 + 0.25 - 0.05)) <= 1e-12
    assert weak_convexity_modulus(1.0, 0.7, 3.0) == 0.0  # firmly non-expansive


def test_moduli_gamma_half_closed_forms():
    beta = 1.0
    for t in np.linspace(0.0, 0.99, 100):
        rep = moduli(TheoryParams(gamma=0.5, t=float(t), beta=beta))
        assert abs(rep.r_over_beta - t / (1 + t)) <= 1e-12
        assert abs(rep.L_over_beta - t / (1 - t)) <= 1e-12
        assert rep.case == 1  # boundary at t_c = 0 for gamma = 1/2


def test_moduli_case_boundary_continuity():
    for gamma in (0.1, 0.2, 0.3, 0.4, 0.45):
        tc = (1 - 2 * gamma) / (2 - 2 * gamma)
        below = moduli(TheoryParams(gamma=gamma, t=tc - 1e-9, beta=1.0))
        above = moduli(TheoryParams(gamma=gamma, t=tc + 1e-9, beta=1.0))
        assert below.case == 2 and above.case == 1
        assert abs(below.L - above.L) <= 1e-7
        at = moduli(TheoryParams(gamma=gamma, t=tc, beta=1.0))
        assert abs(at.L - tc / (1 - tc)) <= 1e-10
        assert abs(at.L - at.r) <= 1e-10


@given(
    gamma=st.floats(0.05, 0.95),
    t=st.floats(0.0, 0.98),
    beta=st.floats(0.1, 10.0),
)
@settings(max_examples=200, deadline=None)
def test_moduli_invariants(gamma, t, beta):
    rep = moduli(TheoryParams(gamma=gamma, t=t, beta=beta))
    assert rep.r >= 0.0
    if rep.case == 1:
        assert rep.L >= rep.r - 1e-12
    assert abs(rep.r - beta * rep.r_over_beta) <= 1e-12 * max(1.0, rep.r)
    assert abs(rep.L - beta * rep.L_over_beta) <= 1e-12 * max(1.0, abs(rep.L))


def test_r_increasing_in_t_and_zero_at_origin():
    for gamma in (0.1, 0.3, 0.5, 0.8, 1.0):
        ts = np.linspace(0.0, 0.95, 40)
        rs = [weak_convexity_modulus(gamma, float(t), 1.0) for t in ts]
        assert rs[0] == 0.0
        assert all(b >= a - 1e-15 for a, b in zip(rs[:-1], rs[1:]))


# The sign equivalence needs gamma >= 1/4.  Below that the case boundary
# (1-2g)/(2-2g) sits above t0, and on the case-2 side r exceeds beta*t/(1-t),
# so the margin already turns negative at t = g/(1-g) < t0.
@given(gamma=st.floats(0.25, 0.95), t=st.floats(0.001, 0.98))
@settings(max_examples=200, deadline=None)
def test_margin_sign_iff_below_t0(gamma, t):
    t0 = solve_t0(gamma)
    if abs(t - t0) <= 1e-9:
        return  # too close to the root to sign reliably
    margin = admm_margin(TheoryParams(gamma=gamma, t=t, beta=1.0))
    assert (margin > 0) == (t < t0)


def test_margin_can_go_negative_below_t0_for_small_gamma():
    # gamma = 0.125: t0 ~ 0.289, but the margin flips sign at g/(1-g) = 1/7.
    gamma = 0.125
    t0 = solve_t0(gamma)
    assert 0.25 < t0  # the probe below is inside (0, t0)
    assert admm_margin(TheoryParams(gamma=gamma, t=0.25, beta=1.0)) < 0
    flip = gamma / (1.0 - gamma)
    assert admm_margin(TheoryParams(gamma=gamma, t=flip - 1e-3, beta=1.0)) > 0
    assert admm_margin(TheoryParams(gamma=gamma, t=flip + 1e-3, beta=1.0)) < 0


def test_margin_reference_value():
    rep = moduli(TheoryParams(gamma=0.25, t=0.2, beta=1.0))
    assert abs(rep.admm_margin - 0.171875) <= 1e-9


def test_t0_reference_values():
    import time

    tic = time.perf_counter()
    v1 = solve_t0(0.5)
    v2 = solve_t0(0.25)
    elapsed = time.perf_counter() - tic
    assert abs(v1 - 0.3761) <= 5e-4
    assert abs(v2 - 1.0 / 3.0) <= 1e-9
    assert elapsed < 0.01


def test_pegd_step_bound_values():
    # bound = max(2 / (1 + r/beta), 1); r=0 at t=0 gives 2
    assert abs(pegd_step_bound(0.5, 0.0, 1.0) - 2.0) <= 1e-12
    r_over_beta = weak_convexity_modulus(0.25, 0.2, 1.0)
    want = max(2.0 / (1.0 + r_over_beta), 1.0)
    assert abs(pegd_step_bound(0.25, 0.2, 7.0) - want) <= 1e-12
    assert pegd_step_bound(1.0, 0.9, 1.0) >= 1.0


def test_moduli_gamma_one_has_no_t0():
    rep = moduli(TheoryParams(gamma=1.0, t=0.4, beta=1.0))
    assert np.isnan(rep.t0)
    assert rep.r == 0.0


def test_verify_prox_property_passes_for_certified():
    for gamma, t in ((0.25, 0.2), (0.5, 0.3), (1.0, 0.5)):
        d = symmetric_linear_denoiser(16, gamma=gamma, seed=31)
        p = TheoryParams(gamma=gamma, t=t, beta=2.0)
        rep = verify_prox_property(d, p, sigma=0.1, samples=500, seed=0)
        assert rep.passed, (gamma, t, rep)


def test_verify_prox_property_detects_planted_violation():
    gamma, t = 0.25, 0.2
    w = (1 / gamma + 0.5) * np.eye(16)  # eigenvalues past the 1/gamma cap
    from cocopnp.denoisers import LinearDenoiser

    d = LinearDenoiser(w, claimed_gamma=gamma)
    p = TheoryParams(gamma=gamma, t=t, beta=2.0)
    rep = verify_prox_property(d, p, sigma=0.1, samples=500, seed=0)
    assert not rep.passed
    assert rep.worst_monotonicity_violation > 1e-6 or rep.worst_lipschitz_violation > 1e-6


def test_modulus_report_is_frozen():
    rep = moduli(TheoryParams(gamma=0.5, t=0.2, beta=1.0))
    assert isinstance(rep, ModulusReport)
    with pytest.raises(AttributeError):
        rep.r = 0.0
