"""Identification checks against analytic plants and finite differences."""

import numpy as np
import pytest
from helpers import LinearModel, random_stable_linear

from roilqr.pde import BurgersModel, Grid, PdeParams, rollout
from roilqr.pod import method_of_snapshots
from roilqr.sysid import (PerturbationConfig, RankDeficientError,
                          RegressionData, fit_full_order_ltv, fit_ltv,
                          generate_rollout_data)


def _nominal(model, horizon, rng, scale=0.5):
    controls = scale * rng.standard_normal((horizon, model.n_u))
    x0 = rng.standard_normal(model.n_x)
    return rollout(model, x0, controls)


def test_linear_plant_data_is_exact():
    rng = np.random.default_rng(0)
    model = random_stable_linear(6, 2, rng)
    nominal = _nominal(model, 5, rng)
    data = generate_rollout_data(model, nominal, None,
                                 PerturbationConfig(seed=1))
    block = np.hstack([model.a, model.b])
    for t in range(5):
        np.testing.assert_allclose(data.outputs[t], block @ data.inputs[t],
                                   atol=1e-12)


def test_fit_recovers_linear_plant():
    rng = np.random.default_rng(1)
    model = random_stable_linear(5, 2, rng)
    nominal = _nominal(model, 6, rng)
    ltv = fit_full_order_ltv(model, nominal,
                             PerturbationConfig(n_rollouts=20, seed=2))
    for t in range(6):
        np.testing.assert_allclose(ltv.A[t], model.a, atol=1e-8)
        np.testing.assert_allclose(ltv.B[t], model.b, atol=1e-8)


def test_fit_independent_of_sigma_on_linear_plant():
    rng = np.random.default_rng(2)
    model = random_stable_linear(4, 2, rng)
    nominal = _nominal(model, 4, rng)
    fits = []
    for sigma in (1e-4, 1e-2, 1.0):
        cfg = PerturbationConfig(sigma_x=sigma, sigma_u=sigma, seed=3)
        fits.append(fit_full_order_ltv(model, nominal, cfg))
    for ltv in fits[1:]:
        np.testing.assert_allclose(ltv.A, fits[0].A, atol=1e-9)
        np.testing.assert_allclose(ltv.B, fits[0].B, atol=1e-9)


def test_identity_plant():
    model = LinearModel(np.eye(4), np.zeros((4, 2)))
    rng = np.random.default_rng(3)
    nominal = _nominal(model, 3, rng)
    ltv = fit_full_order_ltv(model, nominal, PerturbationConfig(seed=4))
    np.testing.assert_allclose(ltv.A, np.broadcast_to(np.eye(4), (3, 4, 4)),
                               atol=1e-8)
    np.testing.assert_allclose(ltv.B, 0.0, atol=1e-8)


def test_zero_dynamics_plant():
    model = LinearModel(np.zeros((4, 4)), np.zeros((4, 2)))
    nominal = _nominal(model, 3, np.random.default_rng(4))
    ltv = fit_full_order_ltv(model, nominal, PerturbationConfig(seed=5))
    np.testing.assert_allclose(ltv.A, 0.0, atol=1e-10)
    np.testing.assert_allclose(ltv.B, 0.0, atol=1e-10)


def test_reduced_fit_equals_galerkin_projection():
    rng = np.random.default_rng(5)
    model = random_stable_linear(12, 3, rng)
    nominal = _nominal(model, 5, rng)
    basis = method_of_snapshots(nominal.states.T, energy_cutoff=1.0)
    data = generate_rollout_data(model, nominal, basis,
                                 PerturbationConfig(seed=6))
    ltv = fit_ltv(data)
    phi = basis.phi
    for t in range(5):
        np.testing.assert_allclose(ltv.A[t], phi.T @ model.a @ phi, atol=1e-6)
        np.testing.assert_allclose(ltv.B[t], phi.T @ model.b, atol=1e-6)


def test_full_order_matches_finite_difference_jacobian():
    grid = Grid(ndim=1, points=20, dx=2.0 / 19)
    model = BurgersModel(grid, PdeParams(dt=2e-3, substeps=5, nu=0.05))
    rng = np.random.default_rng(6)
    nominal = rollout(model, 0.5 * rng.standard_normal(20),
                      0.2 * rng.standard_normal((4, 2)))
    cfg = PerturbationConfig(sigma_x=1e-4, sigma_u=1e-4, seed=7)
    ltv = fit_full_order_ltv(model, nominal, cfg)
    # central finite-difference Jacobian oracle, column by column
    h = 1e-5
    for t in (0, 3):
        x, u = nominal.states[t], nominal.controls[t]
        jac_a = np.empty((20, 20))
        for j in range(20):
            e = np.zeros(20)
            e[j] = h
            jac_a[:, j] = (model.step(x + e, u) - model.step(x - e, u)) / (2 * h)
        jac_b = np.empty((20, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            jac_b[:, j] = (model.step(x, u + e) - model.step(x, u - e)) / (2 * h)
        np.testing.assert_allclose(ltv.A[t], jac_a, atol=1e-4)
        np.testing.assert_allclose(ltv.B[t], jac_b, atol=1e-4)


def test_vanishing_perturbations_give_vanishing_data():
    rng = np.random.default_rng(7)
    model = random_stable_linear(4, 2, rng)
    nominal = _nominal(model, 3, rng)
    cfg = PerturbationConfig(sigma_x=1e-12, sigma_u=1e-12, seed=8)
    data = generate_rollout_data(model, nominal, None, cfg)
    assert np.max(np.abs(data.inputs)) < 1e-10
    assert np.max(np.abs(data.outputs)) < 1e-10


def test_seeded_data_is_byte_identical():
    rng = np.random.default_rng(8)
    model = random_stable_linear(5, 2, rng)
    nominal = _nominal(model, 4, rng)
    cfg = PerturbationConfig(seed=99)
    d1 = generate_rollout_data(model, nominal, None, cfg)
    d2 = generate_rollout_data(model, nominal, None, cfg)
    np.testing.assert_array_equal(d1.inputs, d2.inputs)
    np.testing.assert_array_equal(d1.outputs, d2.outputs)


def test_identifiability_floor():
    rng = np.random.default_rng(9)
    model = random_stable_linear(6, 2, rng)
    nominal = _nominal(model, 3, rng)
    with pytest.raises(ValueError, match="identifiability"):
        generate_rollout_data(model, nominal, None,
                              PerturbationConfig(n_rollouts=7))


def test_rank_deficiency_fails_loudly():
    rng = np.random.default_rng(10)
    # duplicated sample columns make X X^T singular
    col = rng.standard_normal(5)
    inputs = np.tile(col[None, :, None], (2, 1, 8))
    outputs = rng.standard_normal((2, 3, 8))
    data = RegressionData(inputs=inputs, outputs=outputs, n_u=2,
                          full_order=False)
    with pytest.raises(RankDeficientError, match="rollouts"):
        fit_ltv(data)


def test_sample_count_scaling():
    rng = np.random.default_rng(11)
    grid = Grid(ndim=1, points=100, dx=2.0 / 99)
    model = BurgersModel(grid, PdeParams(dt=1e-3, substeps=2, nu=0.05))
    nominal = rollout(model, 0.3 * rng.standard_normal(100),
                      0.1 * rng.standard_normal((6, 2)))
    basis = method_of_snapshots(nominal.states.T, energy_cutoff=0.99999)
    cfg = PerturbationConfig(seed=12)
    n_red = cfg.resolved(basis.n_modes, 2, nominal)[0]
    n_full = cfg.resolved(100, 2, nominal)[0]
    slack = 2
    assert n_red / n_full <= (basis.n_modes + 2 + slack) / (100 + 2)


def test_regression_data_csv_dump(tmp_path):
    rng = np.random.default_rng(12)
    model = random_stable_linear(4, 2, rng)
    nominal = _nominal(model, 3, rng)
    data = generate_rollout_data(model, nominal, None,
                                 PerturbationConfig(seed=13))
    from roilqr.sysid import dump_regression_data

    dump_regression_data(data, tmp_path)
    loaded = np.loadtxt(tmp_path / "t001_inputs.csv", delimiter=",")
    np.testing.assert_allclose(loaded, data.inputs[1], atol=1e-12)
    assert (tmp_path / "t002_outputs.csv").exists()


def test_full_order_needs_dimension_plus_one_samples():
    # 100 states + 2 controls: identifiability floor is 103 samples
    cfg = PerturbationConfig(n_rollouts=103)
    grid = Grid(ndim=1, points=100, dx=2.0 / 99)
    model = BurgersModel(grid, PdeParams(dt=1e-3, substeps=2, nu=0.05))
    nominal = rollout(model, np.zeros(100), 0.1 * np.ones((2, 2)))
    n_r, _, _ = cfg.resolved(100, 2, nominal)
    assert n_r == 103
    with pytest.raises(ValueError):
        PerturbationConfig(n_rollouts=102).resolved(100, 2, nominal)
