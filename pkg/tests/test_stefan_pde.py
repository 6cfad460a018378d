import math

import numpy as np
import pytest
from scipy.integrate import quad

from stefan_melt import stefan_pde as pde
from stefan_melt.checks import melting_run
from stefan_melt.weighted_calculus import GridError, make_grid


def _bump_field(n=200, R=5.0, slope=0.3):
    return pde.make_field(pde.LANDAU, pde.landau_grid(n, 1e-3), 1.0, R, pde.compatible_bump(slope))


def _march(fld, dt, steps, **kw):
    for _ in range(steps):
        fld = pde.step(fld, dt, **kw)
    return fld


# ---------------------------------------------------------------------------
# grid, field and single steps
# ---------------------------------------------------------------------------


def test_landau_grid_first_step():
    g = pde.landau_grid(400, 1e-3)
    assert g.steps[0] == pytest.approx(1e-3, rel=1e-9)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    with pytest.raises(GridError):
        pde.landau_grid(10, 0.5)


def test_field_validation():
    x = pde.landau_grid(50, 1e-3)
    with pytest.raises(pde.StefanError):
        pde.StefanField(0.0, 1.0, 0.0, pde.LANDAU, x, np.ones(50), 5.0)
    with pytest.raises(pde.StefanError):
        pde.StefanField(0.0, 1.0, 0.0, "lab", x, np.zeros(50), 5.0)
    with pytest.raises(pde.StefanError):
        pde.StefanField(0.0, 6.0, 0.0, pde.LANDAU, x, np.zeros(50), 5.0)
    with pytest.raises(GridError):
        pde.StefanField(0.0, 1.0, 0.0, pde.PULLED_BACK, x, np.zeros(50), 5.0)


def test_zero_temperature_is_steady():
    x = pde.landau_grid(100, 1e-3)
    fld = pde.make_field(pde.LANDAU, x, 1.0, 5.0, np.zeros_like)
    assert fld.lam_dot == 0.0
    nxt = pde.step(fld, 0.01)
    assert nxt.lam == fld.lam and nxt.lam_dot == 0.0
    assert np.array_equal(nxt.u, fld.u)
    assert pde.advection_dt_bound(fld) == math.inf


def test_front_speed_from_stefan_law():
    fld = _bump_field()
    # u_r(lambda) = slope for the compatible bump
    assert fld.lam_dot == pytest.approx(-0.3, rel=1e-4)
    assert fld.a == pytest.approx(0.3, rel=1e-4)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(pde.StefanError):
        pde.step(_bump_field(), 0.0)


def test_extinction_event():
    x = pde.landau_grid(50, 1e-3)
    fld = pde.StefanField(0.0, 1e-3, -1.0, pde.LANDAU, x, np.zeros(50), 5.0)
    ev = pde.step(fld, 1.0)
    assert isinstance(ev, pde.ExtinctionEvent)
    assert ev.time_to_zero == pytest.approx(1e-3)


@pytest.mark.parametrize("mu", [2.0, 3.0])
def test_scaling_invariance(mu):
    base = _bump_field()
    a = _march(base, 1e-3, 30)
    b = _march(pde.scale_field(base, mu), 1e-3 / mu**2, 30)
    assert b.lam * mu == pytest.approx(a.lam, rel=1e-13)
    assert b.t * mu**2 == pytest.approx(a.t, rel=1e-13)
    assert np.max(np.abs(b.u - a.u)) <= 1e-13 * np.max(np.abs(a.u))


def test_frozen_front_keeps_nonnegative_data():
    fld = _bump_field(slope=3.0)  # slope >= 2 makes the compatible bump nonnegative
    assert fld.u.min() == 0.0
    out = _march(fld, 1e-2, 50, couple=False)
    assert out.lam == fld.lam
    assert out.u.min() >= 0.0
    # pure heat flow with a Dirichlet sink at the front loses heat
    r = out.r
    heat = lambda f: float(np.trapezoid(f.u * r * r, r))  # noqa: E731
    assert heat(out) < heat(fld)


def test_manufactured_space_orders_quick():
    rows = pde.refinement_table("space", levels=2)
    order = pde.observed_orders(rows, "space")[0]
    assert order == pytest.approx(2.0, abs=0.2)
    assert max(r.stefan_residual for r in rows) <= 1e-4


def test_manufactured_solution_satisfies_boundary_conditions():
    sol = pde.ManufacturedSolution()
    t = 0.3
    lam = float(sol.lam(t))
    h = 1e-6
    u_r = (sol.u(t, lam + h) - sol.u(t, lam - h)) / (2 * h)
    assert sol.u(t, lam) == pytest.approx(0.0, abs=1e-15)
    assert u_r == pytest.approx(-float(sol.lam_dot(t)), rel=1e-8)
    wall = (sol.u(t, sol.R + h) - sol.u(t, sol.R - h)) / (2 * h)
    assert wall == pytest.approx(0.0, abs=1e-8)


def test_refinement_mode_validation():
    with pytest.raises(pde.StefanError):
        pde.refinement_table("both")


# ---------------------------------------------------------------------------
# prepared data
# ---------------------------------------------------------------------------


def test_energy_bounds():
    b = 1e-3
    assert pde.initial_energy_bound(0, b) == b**4
    assert pde.initial_energy_bound(2, b) == b**3
    assert pde.initial_energy_bound(4, b) == pytest.approx(b**3 * abs(math.log(b)))
    assert pde.initial_energy_bound(5, b) == pytest.approx(b ** (2.5 + 0.4))


def test_unperturbed_prepared_data():
    fld, prof = pde.init_from_profile(0, 0.01)
    assert prof.E0 == 0.0 and prof.admissible
    C0 = (2 / math.pi) ** 0.25
    assert prof.coeffs[0] == pytest.approx(-(0.01**1.5) / C0, rel=1e-12)
    rec = pde.project_decomposition(fld, 0, 0.01, etas=prof.etas)
    assert rec.coeffs[0] == pytest.approx(prof.coeffs[0], rel=1e-8)
    assert rec.E_over_b4 < 1e-4


def _perturbation(amp):
    return lambda y: amp * (y - 1.0) ** 2 * np.exp(-((y - 1.0) ** 2))


def _energy_oracle(amp, b):
    """||H_b eps||^2_b for eps = amp (y-1)^2 e^{-(y-1)^2}, derivatives by hand, by adaptive quadrature."""

    def h_eps(y):
        z = y - 1.0
        e = math.exp(-z * z)
        f1 = amp * (2 * z - 2 * z**3) * e
        f2 = amp * (2 - 10 * z * z + 4 * z**4) * e
        return -(f2 + 2 * f1 / y) + b * y * f1

    val, _ = quad(lambda y: h_eps(y) ** 2 * math.exp(-0.5 * b * y * y) * y * y, 1.0, 30.0,
                  epsabs=0.0, epsrel=1e-12, limit=400)
    return val


def test_initial_energy_against_quadrature_oracle():
    b0, amp = 1e-3, 1e-7
    # frozen from _energy_oracle; the removed eigen-components are O(amp b^{5/4}) and negligible here
    assert _energy_oracle(amp, b0) == pytest.approx(7.420202819521575e-14, rel=1e-10)
    _, prof = pde.init_from_profile(0, b0, _perturbation(amp))
    assert prof.E0 == pytest.approx(7.420202819521575e-14, rel=1e-3)
    assert prof.E0 <= b0**4


def test_energy_bound_enforced():
    with pytest.raises(pde.StefanError):
        pde.init_from_profile(0, 1e-3, _perturbation(1e-6))
    _, prof = pde.init_from_profile(0, 1e-3, _perturbation(1e-6), enforce_energy=False)
    assert not prof.admissible


def test_perturbation_must_vanish_at_front():
    with pytest.raises(pde.StefanError):
        pde.init_from_profile(0, 1e-3, lambda y: 1e-8 * np.exp(-y))


def test_initial_boundary_slope():
    b0 = 1e-3
    fld, _ = pde.init_from_profile(0, b0)
    slope = -fld.lam_dot  # u_r(1) with lambda0 = 1 equals d_y v(1)
    assert abs(slope - b0) <= 2.0 * b0**1.5


def test_excited_prepared_coefficient(table):
    b0 = 1e-2
    _, prof = pde.init_from_profile(1, b0, table=table)
    assert prof.coeffs[1] == pytest.approx(-2 * b0**1.5 / table.C[1], rel=1e-12)
    assert prof.coeffs[0] == 0.0


def test_prepared_data_range():
    with pytest.raises(pde.StefanError):
        pde.init_from_profile(0, 0.02)


# ---------------------------------------------------------------------------
# energy identities
# ---------------------------------------------------------------------------


def test_energy_residuals_vanish_for_zero_field():
    x = make_grid(1.0, 12.0, 200)
    fld = pde.make_field(pde.PULLED_BACK, x, 1.0, 12.0, np.zeros_like)
    hist = [fld]
    for _ in range(4):
        hist.append(pde.step(hist[-1], 1e-2))
    res = pde.energy_residuals(hist)
    assert np.all(res.mass == 0.0) and np.all(res.gradient == 0.0) and np.all(res.laplacian == 0.0)
    assert np.all(res.relative == 0.0)


def test_energy_residuals_need_pulled_back_frame():
    fld = _bump_field()
    with pytest.raises(pde.StefanError):
        pde.energy_residuals([fld, fld, fld])
    with pytest.raises(pde.StefanError):
        pde.energy_norms(fld)


def test_mass_identity_sign():
    # a receding front (lambda' < 0) with the dissipation term: d||w||^2/dt has the sign of the right side
    x = make_grid(1.0, 12.0, 1201)
    fld = pde.make_field(pde.PULLED_BACK, x, 1.0, 12.0, pde.compatible_bump(0.3))
    hist = [fld]
    for _ in range(6):
        hist.append(pde.step(hist[-1], 1e-3))
    assert all(f.lam_dot < 0.0 for f in hist)
    norms = [pde.energy_norms(f) for f in hist]
    d = (norms[2].omega - norms[0].omega) / (hist[2].t - hist[0].t)
    f = hist[1]
    rhs = -2.0 * norms[1].grad / f.lam**2 - 3.0 * f.lam_dot / f.lam * norms[1].omega
    assert np.sign(d) == np.sign(rhs)
    assert d == pytest.approx(rhs, rel=2e-2)


def test_energy_identities_first_order():
    rows = pde.energy_refinement(dts=(4e-3, 2e-3), t_end=0.1)
    a, b = np.array(rows[0].max_relative), np.array(rows[1].max_relative)
    assert np.all(np.abs(np.log2(a / b) - 1.0) <= 0.25)


def test_compatible_bump_condition():
    c = 0.4
    f = pde.compatible_bump(c)
    h = 1e-4
    r = np.array([1.0, 1.0 + h, 1.0 + 2 * h])
    u = f(r)
    assert u[0] == 0.0
    u_r = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    assert u_r == pytest.approx(c, rel=1e-6)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def test_freezing_data_is_not_melting():
    x = pde.landau_grid(400, 1e-3)
    fld = pde.make_field(pde.LANDAU, x, 1.0, 5.0, lambda r: -0.3 * (r - 1.0) * np.exp(-0.5 * (r - 1.0) ** 2))
    assert fld.lam_dot > 0.0
    run = pde.run_to_extinction(fld, pde.RunSettings(max_steps=20000))
    assert run.outcome == "non_melting"
    assert run.lam[-1] > run.lam[0]


def test_compact_positive_data_melts():
    x = pde.landau_grid(400, 1e-3)
    fld = pde.make_field(pde.LANDAU, x, 1.0, 10.0, pde.compatible_bump(5.0))
    run = pde.run_to_extinction(fld, pde.RunSettings(max_steps=200000))
    assert run.melted
    assert run.lam[-1] <= 1e-3 * run.lam[0] * (1 + 1e-12)


def test_run_settings_validation():
    with pytest.raises(pde.StefanError):
        pde.RunSettings(ds=0.0)
    with pytest.raises(pde.StefanError):
        pde.RunSettings(lam_floor_ratio=1.5)


def test_nonconcentration_zero_field():
    x = pde.landau_grid(100, 1e-3)
    fld = pde.make_field(pde.LANDAU, x, 1.0, 5.0, np.zeros_like)
    snaps = [pde.Snapshot(0.0, 0.0, 1.0, 0.0, 0.01, fld), pde.Snapshot(1.0, 1.0, 1.0, 0.0, 0.01, fld)]
    rec = pde.nonconcentration_diagnostic(snaps, 2.0)
    assert np.all(rec.exterior == 0.0) and np.all(rec.annulus == 0.0) and np.all(rec.cauchy == 0.0)
    with pytest.raises(pde.StefanError):
        pde.nonconcentration_diagnostic(snaps, 0.5)


@pytest.mark.slow
def test_prepared_stable_run(ctx):
    m = melting_run(ctx)
    run = m["run"]
    assert run.melted and run.monotone
    assert run.lam[-1] <= 1e-3 * run.lam[0] * (1 + 1e-12)
    assert run.stefan_residual.max() <= 1e-4
    names, data = run.columns()
    assert names[0] == "t" and data.shape[0] == run.t.size


@pytest.mark.slow
def test_boundary_relation_in_resolved_range(ctx):
    recs = melting_run(ctx)["records"]
    early = recs[1: len(recs) // 2]
    assert all(abs(r.boundary_relation_residual) <= 1e-2 * r.b**2 for r in early)
    assert all(r.E_over_b4 <= 10.0 for r in recs)


@pytest.mark.slow
def test_decade_differences_shrink(ctx):
    m = melting_run(ctx)
    diffs = m["nonconcentration"].decade_differences(m["per_decade"])
    assert np.all(np.diff(diffs) < 0.0)
