import numpy as np
import pytest

from walllaw import experiment as ex


def test_fit_exact_power():
    eps = np.array([0.5, 0.4, 0.2, 0.1])
    a, r = ex.fit_order(zip(eps, eps**2))
    assert a == pytest.approx(2.0, abs=1e-12) and r < 1e-12
    a, _ = ex.fit_order(zip(eps, 3 * eps**1.5))
    assert a == pytest.approx(1.5, abs=1e-12)


def test_fit_jittered():
    eps = np.array(ex.DEFAULT_EPSILONS)
    e = eps * (1 + 0.01 * np.sin(np.arange(len(eps))))
    assert ex.fit_order(zip(eps, e))[0] == pytest.approx(1.0, abs=0.02)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        ex.fit_order([(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)])
    with pytest.raises(ValueError):
        ex.fit_order([(0.1, 1.0), (0.2, 2.0)])


def test_plan_validation():
    with pytest.raises(ex.PlanError, match="at least 4"):
        ex.ExperimentPlan(epsilons=(0.5, 0.1)).validate()
    with pytest.raises(ex.PlanError, match="unknown family"):
        ex.ExperimentPlan(families=("U7",)).validate()
    plan = ex.ExperimentPlan(epsilons=(0.1, 0.5, 0.2, 0.3), families=("U1", "EMS2")).validate()
    assert plan.epsilons == (0.5, 0.3, 0.2, 0.1)
    assert plan.families == ("U1_fem", "ExplicitMS2")


def test_flat_reference_is_taller_poiseuille():
    from walllaw.geometry import flat_profile

    eps, delta = 0.2, 0.05
    plan = ex.ExperimentPlan(profile=flat_profile(delta)).validate()
    u = ex.solve_reference(plan, eps)
    x2 = u.coordinates[:, 1]
    lo = -eps * delta
    assert np.abs(u.dofs - 0.5 * (x2 - lo) * (1 - x2)).max() < 1e-12


def test_reference_maximum_near_center():
    plan = ex.ExperimentPlan().validate()
    u = ex.solve_reference(plan, 0.5)
    x2 = u.coordinates[np.argmax(u.dofs), 1]
    assert abs(x2 - 0.5) <= 0.5 * 0.5


@pytest.fixture(scope="module")
def reference_change():
    return ex.reference_self_convergence(ex.ExperimentPlan(), 0.1)


def test_reference_self_convergence_relative(reference_change, experiment):
    plan = ex.ExperimentPlan().validate()
    u = ex.solve_reference(plan, 0.1)
    from walllaw import fem

    size = plan.channel_factor(0.1) * fem.norm(u, ex.family_mesh(plan, 0.1))
    assert reference_change <= 1e-4 * size


def test_reference_resolves_algebraic_families(reference_change, experiment):
    smallest = min(min(experiment.record(f).l2_errors) for f in ("U0", "U1_fem", "U2_fem", "ExplicitMS1", "ImplicitMS1"))
    assert reference_change * 10 <= smallest


@pytest.mark.xfail(
    strict=True,
    reason="the straight-edged rough wall limits the reference to O(h^2); its error matches the "
    "exponentially small ExplicitMS2 error at eps=0.1",
)
def test_reference_resolves_every_family(reference_change, experiment):
    smallest = min(min(r.l2_errors) for r in experiment.records)
    assert reference_change * 10 <= smallest


def test_monotone_errors(experiment):
    for r in experiment.records:
        e = np.array(r.l2_errors)  # ordered from largest to smallest eps
        inversions = np.flatnonzero(np.diff(e) > 0)
        assert len(inversions) <= 1 and all(i < 2 for i in inversions), r.family


def test_order_floor_and_gap(experiment):
    a = {r.family: r.alpha for r in experiment.records}
    for fam in ("U1_fem", "U2_fem", "ImplicitMS1"):
        assert a[fam] >= 1.3
    assert abs(a["U2_fem"] - a["U1_fem"]) <= 0.15


def test_all_families_tend_to_poiseuille(experiment):
    plan = ex.ExperimentPlan().validate()
    from walllaw import fem, wall_laws as wl

    eps_list = plan.epsilons
    dist = []
    for eps in eps_list:
        mesh = ex.family_mesh(plan, eps)
        approx = ex.build_family(plan, "ImplicitMS1", eps, experiment.cells, mesh)
        dist.append(plan.channel_factor(eps) * fem.norm(fem.Difference(approx, wl.poiseuille_profile(1.0)), mesh))
    assert ex.fit_order(zip(eps_list, dist))[0] >= 0.9


def test_outputs_deterministic(tmp_path, experiment, cell_pair):
    ex.write_outputs(experiment, tmp_path / "a")
    again = ex.run_experiment(ex.ExperimentPlan(jobs=2), cell_pair)
    ex.write_outputs(again, tmp_path / "b")
    for name in ("errors.csv", "orders.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    head = (tmp_path / "a" / "errors.csv").read_text().splitlines()[0]
    assert head == "family,epsilon,l2_error,h1semi_error"
    assert (tmp_path / "a" / "orders.csv").read_text().startswith("family,alpha,fit_residual\n")


def test_manifest_lists_every_knob(tmp_path, experiment):
    ex.write_outputs(experiment, tmp_path)
    text = (tmp_path / "manifest.txt").read_text()
    for key, value in ex.plan_settings(experiment.plan):
        assert f"{key} = {value}" in text
    assert "cross_mesh_direction" in text and "status[U0] = ok" in text


def test_failures_recorded_without_abort(cell_pair):
    plan = ex.ExperimentPlan(families=("U0", "U2_analytic"), epsilons=(0.5, 0.4, 0.3, 0.2))
    result = ex.run_experiment(plan, cell_pair)
    assert result.ok
    assert len(result.record("U0").l2_errors) == 4
