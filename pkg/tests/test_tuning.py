import logging
from dataclasses import replace

import numpy as np
import pandas as pd
import pydantic
import pytest

from fairfed.data import Dataset
from fairfed.federation import FederationConfig
from fairfed.trainer import LambdaSweepConfig, TrainConfig
from fairfed.tuning import (
    AUDIT_COLUMNS,
    GammaSearchError,
    GammaTrial,
    TuningConfig,
    gamma_grid,
    lambda_candidates,
    optimize_gamma,
    refine_range,
    runner_up_index,
    select_gamma,
    selected_index,
    tune,
    two_step_gamma,
    write_audit,
)


def dataset(n: int, seed: int, scale: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    groups = rng.integers(0, 2, size=n)
    return Dataset(
        feature_names=("x0", "x1"),
        features=scale * x,
        outcomes=np.where(x[:, 0] + 0.8 * groups + rng.normal(size=n) > 0.4, 1, -1),
        groups=groups,
    )


CLIENTS = [(dataset(80, 2 * k), dataset(40, 2 * k + 1)) for k in range(2)]
FED = FederationConfig(clients=2, rounds=2, train=TrainConfig(batch_size=32, seed=3))
TUNE = TuningConfig(
    coarse_points=3,
    refined_points=3,
    gamma_range=(0.0, 0.1),
    sweep=LambdaSweepConfig(step=0.5, max_lambda=1.0),
)


def trial(gamma, auc, dpd, eod) -> GammaTrial:
    return GammaTrial(gamma, auc, dpd, None, eod, None)


class TestGrids:
    def test_coarse_grid(self):
        grid = gamma_grid(0.0001, 0.1, 10)
        assert len(grid) == 10
        assert (grid[0], grid[-1]) == (0.0001, 0.1)
        assert grid[1] == pytest.approx(0.0112, abs=1e-12)
        assert grid[2] == pytest.approx(0.0223, abs=1e-12)

    def test_two_points(self):
        assert gamma_grid(0.0, 1.0, 2) == [0.0, 1.0]

    def test_strictly_increasing(self):
        grid = gamma_grid(0.0112, 0.0223, 10)
        assert all(a < b for a, b in zip(grid, grid[1:]))
        assert (grid[0], grid[-1]) == (0.0112, 0.0223)

    @pytest.mark.parametrize("lo, hi, count", ((0.1, 0.01, 5), (0.1, 0.1, 5), (0.0, 1.0, 1)))
    def test_invalid(self, lo, hi, count):
        with pytest.raises(ValueError):
            gamma_grid(lo, hi, count)

    def test_config_rejects_reversed_range(self):
        with pytest.raises(pydantic.ValidationError):
            TuningConfig(gamma_range=(0.1, 0.01))


class TestLambdaCandidates:
    @pytest.mark.parametrize(
        "policy, count, expected",
        (
            ("min", 1, [5.0]),
            ("max", 1, [15.0]),
            ("max", 3, [5.0, 10.0, 15.0]),
            ("min", 2, [2.5, 5.0]),
        ),
    )
    def test_examples(self, policy, count, expected):
        assert lambda_candidates([10.0, 5.0, 15.0], policy, count) == expected

    @pytest.mark.parametrize("policy", ("min", "max"))
    def test_single_client(self, policy):
        assert lambda_candidates([7.0], policy, 2) == [3.5, 7.0]

    def test_all_zero(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert lambda_candidates([0.0, 2.0], "min", 3) == [0.0]
        assert "aggregated lambda (min over clients) is 0" in caplog.text

    def test_empty(self):
        with pytest.raises(ValueError):
            lambda_candidates([])


class TestSelectionRule:
    def test_fairest_within_budget_wins(self):
        table = select_gamma(
            [
                trial(0.01, 0.80, 0.10, 0.10),
                trial(0.02, 0.79, 0.05, 0.05),
                trial(0.03, 0.75, 0.00, 0.00),
            ],
            auc_budget=0.02,
        )
        assert [r.eligible for r in table] == [True, True, False]
        assert [r.selected for r in table] == [False, True, False]

    def test_equal_auc_prefers_fairer(self):
        table = select_gamma(
            [trial(0.01, 0.8, 0.2, 0.2), trial(0.02, 0.8, 0.1, 0.1)], auc_budget=0.02
        )
        assert selected_index(table) == 1

    def test_zero_budget_keeps_best_auc(self):
        table = select_gamma(
            [trial(0.01, 0.80, 0.10, 0.10), trial(0.02, 0.79, 0.0, 0.0)], auc_budget=0.0
        )
        assert selected_index(table) == 0

    def test_ties_go_to_smaller_gamma(self):
        table = select_gamma(
            [trial(0.03, 0.8, 0.1, 0.1), trial(0.01, 0.8, 0.1, 0.1)], auc_budget=0.02
        )
        assert table[selected_index(table)].gamma == 0.01

    def test_undefined_score_ranks_last(self):
        table = select_gamma(
            [trial(0.01, 0.8, None, 0.1), trial(0.02, 0.8, 0.3, 0.3)], auc_budget=0.02
        )
        assert selected_index(table) == 1

    def test_reapplying_the_rule_is_stable(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            rows = [
                trial(g, float(rng.uniform(0.6, 0.9)), float(rng.random()), float(rng.random()))
                for g in gamma_grid(0.0, 0.1, 6)
            ]
            table = select_gamma(rows, 0.02)
            stripped = [replace(r, eligible=False, selected=False) for r in table]
            assert select_gamma(stripped, 0.02) == table
            assert sum(r.selected for r in table) == 1
            assert table[selected_index(table)].eligible

    def test_runner_up(self):
        table = [trial(0.0, 0.8, 0.2, 0.2), trial(0.1, 0.8, 0.1, 0.1), trial(0.2, 0.8, 0.3, 0.3)]
        assert runner_up_index(table, 0.02) == 0
        assert runner_up_index(table[:1], 0.02) is None


class TestRefineRange:
    grid = [0.0, 1.0, 2.0, 3.0, 4.0]

    def test_bracket(self):
        assert refine_range(self.grid, 2, "bracket") == (1.0, 3.0)

    def test_neighbor_follows_runner_up(self):
        assert refine_range(self.grid, 2, "neighbor", runner_up=1) == (1.0, 2.0)
        assert refine_range(self.grid, 2, "neighbor", runner_up=4) == (2.0, 3.0)
        assert refine_range(self.grid, 2, "neighbor") == (2.0, 3.0)

    def test_refined_grid_from_coarse_neighbors(self):
        coarse = gamma_grid(0.0001, 0.1, 10)
        lo, hi = refine_range(coarse, 1, "neighbor", runner_up=2)
        assert (round(lo, 4), round(hi, 4)) == (0.0112, 0.0223)
        assert round(gamma_grid(lo, hi, 10)[7], 6) == 0.019833

    @pytest.mark.parametrize("convention", ("neighbor", "bracket"))
    def test_clamped_at_the_ends(self, convention):
        assert refine_range(self.grid, 0, convention, runner_up=1) == (0.0, 1.0)
        assert refine_range(self.grid, 4, convention, runner_up=3) == (3.0, 4.0)


class TestSearch:
    def test_two_step(self):
        result = two_step_gamma(0.5, CLIENTS, FED, TUNE)
        coarse_gammas = [r.gamma for r in result.coarse.table]
        refined_gammas = [r.gamma for r in result.refined.table]

        assert coarse_gammas == gamma_grid(0.0, 0.1, 3)
        assert (refined_gammas[0], refined_gammas[-1]) == result.refined_range
        lo, hi = result.refined_range
        assert 0.0 <= lo < hi <= 0.1
        assert result.coarse.gamma in (lo, hi)
        assert result.gamma in refined_gammas
        assert result.refined.table[selected_index(result.refined.table)].gamma == result.gamma

    def test_single_value_grid(self):
        search = optimize_gamma([0.03], 0.5, CLIENTS, FED)
        assert search.gamma == 0.03
        assert [r.selected for r in search.table] == [True]

    def test_searched_table_obeys_the_rule(self):
        # given clients whose outcomes depend on the sensitive group
        search = optimize_gamma([0.0, 0.05], 0.5, CLIENTS, FED)
        chosen = search.table[selected_index(search.table)]

        # then the chosen run is eligible, and no eligible or ineligible run is fairer
        assert chosen.gamma == search.gamma
        assert chosen.eligible
        assert all(chosen.score <= r.score for r in search.table if r.eligible)
        assert all(chosen.score <= r.score for r in search.table if not r.eligible)

        # and re-applying the rule to the emitted table reproduces its flags
        stripped = [replace(r, eligible=False, selected=False) for r in search.table]
        assert select_gamma(stripped, 0.02) == search.table

    def test_parallel_matches_sequential(self):
        grid = gamma_grid(0.0, 0.1, 3)
        sequential = optimize_gamma(grid, 0.5, CLIENTS, FED)
        parallel = optimize_gamma(grid, 0.5, CLIENTS, FED, max_workers=3)
        assert parallel == sequential

    def test_failed_grid_point(self):
        clients = [(dataset(20, k, scale=100.0), dataset(10, 9 + k)) for k in range(2)]
        fed = FED.model_copy(update={"train": TrainConfig(learning_rate=1e7)})
        with pytest.raises(GammaSearchError) as err:
            optimize_gamma([0.05], 0.0, clients, fed)
        assert err.value.gamma == 0.05

    def test_pinned_values(self):
        result = tune(CLIENTS, FED, TUNE, lambda_=1.0, gamma=0.02)
        assert (result.lambda_, result.gamma) == (1.0, 0.02)
        assert result.sweeps == []
        assert result.candidates == [1.0]

    def test_full_pass(self):
        result = tune(CLIENTS, FED, TUNE)
        assert len(result.sweeps) == 2
        assert result.candidates == lambda_candidates(
            [s.lambda_k for s in result.sweeps], TUNE.lambda_policy, TUNE.lambda_count
        )
        assert result.lambda_ in result.candidates
        assert result.gamma in [r.gamma for r in result.searches[0].refined.table]


def test_write_audit(tmp_path):
    search = two_step_gamma(0.5, CLIENTS, FED, TUNE)
    path = write_audit([search], tmp_path / "audit" / "gamma_audit.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["lambda", "step", *AUDIT_COLUMNS, "convention"]
    assert frame["step"].tolist() == ["coarse"] * 3 + ["refined"] * 3
    assert frame["selected"].sum() == 2
    assert set(frame["convention"]) == {"neighbor"}
