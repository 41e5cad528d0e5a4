import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snds.config import ExperimentConfig, load_config, parse_config, parse_overrides, to_ini
from snds.errors import ConfigError

MINIMAL_MNIST = "[experiment]\ndataset = mnist\n"


class TestParse:
    def test_minimal_mnist_defaults(self):
        cfg = parse_config(MINIMAL_MNIST)
        assert (cfg.lr, cfg.momentum, cfg.weight_decay, cfg.batch_size) == (0.01, 0.9, 1e-4, 128)
        assert (cfg.delta, cfg.depth_lr, cfg.depth_lr_late, cfg.prior_lambda) == (0.95, 0.05, 0.03, 1.0)
        assert cfg.mode == "snds" and cfg.cosine

    def test_negative_budget_names_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL_MNIST + "[schedule]\nbudget = -5\n")
        assert err.value.key == "schedule.budget"

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="optimizer.learning_rate"):
            parse_config(MINIMAL_MNIST + "[optimizer]\nlearning_rate = 0.1\n")

    def test_key_in_wrong_section(self):
        with pytest.raises(ConfigError, match="depth.lr"):
            parse_config(MINIMAL_MNIST + "[depth]\nlr = 0.1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="training"):
            parse_config(MINIMAL_MNIST + "[training]\nx = 1\n")

    def test_type_mismatch_names_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config(MINIMAL_MNIST + "[schedule]\ncycles = three\n")
        assert err.value.key == "schedule.cycles"

    def test_missing_dataset(self):
        with pytest.raises(ConfigError, match="experiment.dataset"):
            parse_config("[schedule]\ncycles = 2\n")

    def test_fixed_needs_depth(self):
        with pytest.raises(ConfigError, match="depth.fixed_depth"):
            parse_config(MINIMAL_MNIST.replace("mnist", "blobs") + "mode = fixed\n")

    def test_schedule_must_fit_pool(self):
        with pytest.raises(ConfigError, match="pool_size"):
            parse_config(MINIMAL_MNIST + "[data]\npool_size = 500\n[schedule]\ninit_labels = 100\ncycles = 3\n"
                         "budget = 200\n")

    def test_budget_list_length(self):
        with pytest.raises(ConfigError, match="one per cycle"):
            parse_config(MINIMAL_MNIST + "[schedule]\ncycles = 3\nbudget = 1,2\n")

    def test_overrides_win(self):
        cfg = parse_config(MINIMAL_MNIST + "[schedule]\ncycles = 2\n", parse_overrides(["schedule.cycles=5",
                                                                                          "seed=3"]))
        assert (cfg.cycles, cfg.seed) == (5, 3)

    def test_override_unknown(self):
        with pytest.raises(ConfigError):
            parse_overrides(["model.nope=1"])

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.ini")


class TestRoundTrip:
    def test_defaults(self):
        cfg = parse_config(MINIMAL_MNIST)
        assert parse_config(to_ini(cfg)) == cfg

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(["snds", "meanfield"]), st.integers(0, 10**6), st.floats(1e-4, 1.0),
           st.lists(st.integers(1, 50), min_size=3, max_size=3), st.booleans())
    def test_round_trip_property(self, mode, seed, lr, budget, bn):
        cfg = ExperimentConfig(dataset="blobs", mode=mode, seed=seed, lr=lr, cycles=3, budget=tuple(budget),
                               batch_norm=bn, classes=(3, 5))
        text = to_ini(cfg)
        assert parse_config(text) == cfg
        assert to_ini(parse_config(text)) == text


def test_inline_comments():
    cfg = parse_config("[experiment]\ndataset = blobs   ; synthetic\nmode = meanfield ; no uniform phase\n")
    assert (cfg.dataset, cfg.mode) == ("blobs", "meanfield")
