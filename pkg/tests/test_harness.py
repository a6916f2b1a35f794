import numpy as np
import pytest

from fairfed import metrics
from fairfed.config import ExperimentConfig
from fairfed.harness import (
    ExperimentError,
    load_sites,
    prepare_clients,
    run_experiment,
    train_model,
)
from fairfed.types import ROSTER_ORDER


def with_learning_rate(cfg: ExperimentConfig, rate: float) -> ExperimentConfig:
    train = cfg.federation.train.model_copy(update={"learning_rate": rate})
    federation = cfg.federation.model_copy(update={"train": train})
    return cfg.model_copy(update={"federation": federation})


class TestPrepareClients:
    def test_splits_every_site(self, make_config):
        cfg = make_config()
        sites = load_sites(cfg)
        prepared = prepare_clients(cfg)
        assert len(prepared.clients) == cfg.n_clients == len(sites)
        for site, (train, test) in zip(sites, prepared.clients):
            assert train.n + test.n == site.n
            assert abs(train.n - 0.7 * site.n) <= 1

    def test_full_cohort_standardization(self, make_config):
        prepared = prepare_clients(make_config())
        assert prepared.standardization is not None
        pooled = np.concatenate(
            [np.concatenate([train.features, test.features]) for train, test in prepared.clients]
        )
        np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(pooled.std(axis=0, ddof=1), 1.0, rtol=1e-12)

    def test_train_only_standardization(self, make_config):
        prepared = prepare_clients(make_config(standardization="train-only"))
        pooled = np.concatenate([train.features for train, _ in prepared.clients])
        np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-12)

    def test_standardization_off(self, make_config):
        prepared = prepare_clients(make_config(standardize=False))
        assert prepared.standardization is None

    def test_deterministic(self, make_config):
        a, b = prepare_clients(make_config()), prepare_clients(make_config())
        for (train_a, test_a), (train_b, test_b) in zip(a.clients, b.clients):
            assert np.array_equal(train_a.features, train_b.features)
            assert np.array_equal(test_a.outcomes, test_b.outcomes)


class TestRunExperiment:
    def test_full_roster(self, make_config):
        cfg = make_config()
        result = run_experiment(cfg)

        assert list(result.models) == list(ROSTER_ORDER)
        for model in result.models.values():
            assert len(model.reports) == cfg.n_clients
            assert len(model.weights) == cfg.n_clients
        central = result.models["central"].delta
        assert central is not None
        assert central.auc == 0.0
        assert set(central.percent.values()) <= {0.0, None}
        assert result.tuning == {}

    def test_roster_order_does_not_matter(self, make_config):
        forward = run_experiment(make_config(roster=["central", "fedavg", "local"]))
        backward = run_experiment(make_config(roster=["local", "fedavg", "central"]))
        assert list(backward.models) == ["central", "local", "fedavg"]
        for name in forward.models:
            assert [r.headline() for r in forward.models[name].reports] == [
                r.headline() for r in backward.models[name].reports
            ]

    def test_local_models_are_scored_on_their_own_site(self, make_config):
        cfg = make_config(roster=["local"])
        result = run_experiment(cfg)
        clients = prepare_clients(cfg).clients
        local = result.models["local"]
        for weights, report, (_, test) in zip(local.weights, local.reports, clients):
            assert report.headline() == metrics.evaluate(weights, test).headline()

    def test_zero_pinned_penalty_matches_plain_model(self, make_config):
        result = run_experiment(
            make_config(roster=["fedavg", "fairfml-fedavg"], pinned_lambda=0.0, pinned_gamma=0.0)
        )
        assert result.models["fairfml-fedavg"].weights == result.models["fedavg"].weights

    def test_perfedavg_hyperparameters(self, make_config):
        cfg = make_config(roster=["perfedavg", "fairfml-perfedavg"])
        result = run_experiment(cfg)
        assert result.models["fairfml-perfedavg"].hyperparameters == {
            "lambda": 1.0,
            "gamma": 0.01,
            "inner_steps": cfg.federation.inner_steps,
            "inner_lr": cfg.federation.inner_lr,
        }
        # no central model, so no deltas
        assert result.models["perfedavg"].delta is None

    def test_tuned_fair_model(self, make_config):
        cfg = make_config(roster=["fairfml-fedavg"], pinned_lambda=None, pinned_gamma=None)
        result = run_experiment(cfg)
        tuned = result.tuning["fairfml-fedavg"]
        assert len(tuned.sweeps) == cfg.n_clients
        assert result.models["fairfml-fedavg"].hyperparameters == {
            "lambda": tuned.lambda_,
            "gamma": tuned.gamma,
        }

    def test_metadata(self, make_config):
        cfg = make_config(roster=["central"])
        metadata = run_experiment(cfg).metadata
        assert metadata["clients"] == cfg.n_clients
        assert metadata["seeds"] == {"synthetic": 1, "partition": 1, "split": 1, "train": 1}
        assert metadata["hyperparameters"] == {"central": {"lambda": 0.0, "gamma": 0.0}}
        assert ExperimentConfig.model_validate(metadata["config"]) == cfg
        assert set(metadata["standardization"]["means"]) == {"x0", "x1", "x2"}

    def test_subgroups(self, make_config):
        result = run_experiment(make_config(roster=["central", "fedavg"], subgroup="race"))
        frame = result.subgroups
        assert frame is not None
        assert list(frame.columns) == [
            "Model",
            "Client",
            "Race",
            "N",
            "Outcome Prevalence",
            "DPD",
            "DPR",
            "EOD",
            "EOR",
        ]
        assert set(frame["Model"]) == {"central", "fedavg"}

    def test_divergence_names_the_model(self, make_config):
        cfg = with_learning_rate(make_config(roster=["central", "fedavg"]), 1e9)
        with pytest.raises(ExperimentError) as err:
            run_experiment(cfg)
        assert err.value.model == "central"
        assert err.value.client == 0
        assert err.value.round_index == 1


def test_central_matches_across_clients(make_config):
    cfg = make_config()
    weights, hyper, tuned = train_model("central", cfg, prepare_clients(cfg).clients)
    assert all(w == weights[0] for w in weights)
    assert hyper == {"lambda": 0.0, "gamma": 0.0}
    assert tuned is None
