import numpy as np
import pytest

from robust_hjm.scenarios import (ScenarioError, ScenarioKind, TimeGrid, VolatilityBand, VolatilityScenario,
                                  coarsen_increments, driver_increments, generate_path, generate_paths,
                                  path_from_increments, refinement_paths, scenario_family)


def test_band_validation():
    with pytest.raises(ValueError):
        VolatilityBand(0.2, 0.1)
    with pytest.raises(ValueError):
        VolatilityBand(0.0, 0.1)
    assert VolatilityBand(0.15, 0.15).is_singleton


def test_grid_index_and_coarsen():
    g = TimeGrid(1.0, 100)
    assert g.index_of(0.25) == 25
    with pytest.raises(ValueError):
        g.index_of(0.255)
    assert g.coarsen(4).n_steps == 25
    with pytest.raises(ValueError):
        g.coarsen(3)


def test_constant_high_qv_is_exact(band):
    path = generate_path(VolatilityScenario.constant_high(band), TimeGrid(1.0, 100), seed=123)
    # bit-identical to sigma^2 * t in floating point (0.2**2 is not the literal 0.04)
    assert path.qv_path[-1] == 0.2 ** 2
    assert path.qv_path[-1] == pytest.approx(0.04, abs=1e-17)
    assert np.array_equal(path.qv_path, 0.2 ** 2 * path.grid.times)


def test_bang_bang_qv(band):
    path = generate_path(VolatilityScenario.bang_bang(band, (0.5,)), TimeGrid(1.0, 100), seed=0)
    assert path.qv_path[-1] == pytest.approx(0.1 ** 2 * 0.5 + 0.2 ** 2 * 0.5, abs=1e-15)
    assert np.all(path.sigma_real[:50] == 0.1) and np.all(path.sigma_real[50:] == 0.2)


def test_standard_brownian_reduction():
    # singleton band sigma = 1: terminal variance 1 (oracle: Var W_1 = 1)
    band = VolatilityBand(1.0, 1.0)
    paths = generate_paths(VolatilityScenario.constant_low(band), TimeGrid(1.0, 20), seed=7, n_paths=100_000)
    x = paths.b_path[:, -1]
    var = x.var(ddof=1)
    se = np.sqrt(2.0 / (x.size - 1))  # standard error of a Gaussian sample variance
    assert abs(var - 1.0) <= 3 * se


def test_out_of_band_scenario_rejected(band):
    with pytest.raises(ScenarioError):
        VolatilityScenario.constant_mid(band, 0.3)
    with pytest.raises(ScenarioError):
        VolatilityScenario.bang_bang(band, (0.5,), start_level=0.05)
    with pytest.raises(ScenarioError):
        VolatilityScenario.state_feedback(band, "nope")


def test_determinism_and_batch_consistency(band, grid):
    scen = VolatilityScenario.state_feedback(band)
    p1, p2 = generate_path(scen, grid, 42), generate_path(scen, grid, 42)
    assert np.array_equal(p1.b_path, p2.b_path) and np.array_equal(p1.qv_path, p2.qv_path)
    batch = generate_paths(scen, grid, 42, 5)
    assert np.array_equal(batch.path(0).b_path, p1.b_path)
    # any slice of paths can be regenerated on its own
    tail = generate_paths(scen, grid, 42, 2, start=3)
    assert np.array_equal(tail.b_path, batch.b_path[3:])
    assert not np.array_equal(generate_path(scen, grid, 43).b_path, p1.b_path)


def test_state_feedback_rule(band, grid):
    path = generate_path(VolatilityScenario.state_feedback(band, "sign"), grid, 3)
    expected = np.where(path.b_path[:-1] >= 0, 0.2, 0.1)
    assert np.array_equal(path.sigma_real, expected)


def test_common_random_numbers(band, grid):
    lo = generate_path(VolatilityScenario.constant_low(band), grid, 9)
    hi = generate_path(VolatilityScenario.constant_high(band), grid, 9)
    assert np.allclose(hi.b_path, 2 * lo.b_path, rtol=0, atol=1e-15)


def test_refinement_shares_driver(band):
    paths = refinement_paths(VolatilityScenario.constant_high(band), 1.0, (100, 200, 400), seed=1)
    assert paths[100].b_path[-1] == pytest.approx(paths[400].b_path[-1], abs=1e-14)
    assert np.allclose(paths[400].coarsen(4).b_path, paths[100].b_path, atol=1e-14)


def test_coarsen_increments():
    w = np.arange(12.0).reshape(2, 6)
    assert np.array_equal(coarsen_increments(w, 3), [[3, 12], [21, 30]])


def test_driver_increment_scale(grid):
    w = driver_increments(grid, 0, 2000)
    assert abs(w.std() * np.sqrt(grid.n_steps) - 1) < 0.01


def test_family_construction(band, grid):
    assert [s.kind for s in scenario_family(band, grid, 2)] == [ScenarioKind.CONSTANT_LOW, ScenarioKind.CONSTANT_HIGH]
    five = scenario_family(band, grid, 5)
    assert [s.name for s in five] == ["constant_low", "constant_high", "constant_mid(0.15)",
                                      "bang_bang(0.1@[0.5])", "bang_bang(0.2@[0.5])"]
    nine = scenario_family(band, grid, 9)
    assert len({s.name for s in nine}) == 9


def test_singleton_family_realizes_single_sigma(grid):
    band = VolatilityBand(0.15, 0.15)
    for scen in scenario_family(band, grid, 9):
        path = generate_path(scen, grid, 5)
        assert np.all(path.sigma_real == 0.15)


def test_serialization_round_trip(band):
    for scen in scenario_family(band, TimeGrid(1.0, 12), 9):
        again = VolatilityScenario.from_dict(scen.to_dict(), band)
        assert again == scen


def test_path_arrays_are_read_only(band, grid):
    path = generate_path(VolatilityScenario.constant_low(band), grid, 0)
    with pytest.raises(ValueError):
        path.b_path[0] = 1.0


def test_wrong_increment_count(band, grid):
    with pytest.raises(ValueError):
        path_from_increments(VolatilityScenario.constant_low(band), grid, np.zeros(99))
