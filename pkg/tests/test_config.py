import pytest

from ttrnn.config import TrainConfig, parse_kv
from ttrnn.errors import ConfigError


class TestParseKV:
    def test_basic(self):
        text = "a = 1\nb = hello world\n"
        assert parse_kv(text) == {"a": "1", "b": "hello world"}

    def test_comments_and_blanks(self):
        text = "# header\n\na = 1  # trailing\n   \n# more\nb = 2\n"
        assert parse_kv(text) == {"a": "1", "b": "2"}

    def test_later_key_wins(self):
        assert parse_kv("a = 1\na = 2\n") == {"a": "2"}

    def test_no_equals_is_an_error_with_line_number(self):
        with pytest.raises(ConfigError, match="cfg:3"):
            parse_kv("a = 1\n\njust words\n", source="cfg")

    def test_empty_key(self):
        with pytest.raises(ConfigError, match="empty key"):
            parse_kv("= 5\n")

    def test_value_may_contain_equals(self):
        assert parse_kv("a = x=y\n") == {"a": "x=y"}


class TestTrainConfig:
    def test_defaults_are_valid(self):
        cfg = TrainConfig.from_dict({})
        assert cfg.task == "mnist-row"
        assert cfg.hidden == 100
        assert cfg.hidden_modes == (10, 10)
        assert cfg.seed_permutation == 8888

    def test_unknown_field_named(self):
        with pytest.raises(ConfigError, match="lerning_rate"):
            TrainConfig.from_dict({"lerning_rate": "0.1"})

    def test_bad_int_named(self):
        with pytest.raises(ConfigError, match="field epochs"):
            TrainConfig.from_dict({"epochs": "three"})

    def test_bad_bool_named(self):
        with pytest.raises(ConfigError, match="field early_stop"):
            TrainConfig.from_dict({"early_stop": "yes"})

    def test_modes_accept_x_and_comma(self):
        a = TrainConfig.from_dict({"hidden_modes": "10x10"})
        b = TrainConfig.from_dict({"hidden_modes": "10,10"})
        assert a.hidden_modes == b.hidden_modes == (10, 10)

    def test_bad_modes_named(self):
        with pytest.raises(ConfigError, match="hidden_modes"):
            TrainConfig.from_dict({"hidden_modes": "10by10"})

    def test_enum_fields_validated(self):
        with pytest.raises(ConfigError, match="field task"):
            TrainConfig.from_dict({"task": "cifar"})
        with pytest.raises(ConfigError, match="field model"):
            TrainConfig.from_dict({"model": "lstm"})
        with pytest.raises(ConfigError, match="parameterization"):
            TrainConfig.from_dict({"parameterization": "sparse"})

    def test_tt_needs_modes(self):
        with pytest.raises(ConfigError, match="hidden_modes"):
            TrainConfig.from_dict({"hidden_modes": "none"})

    def test_dense_needs_no_modes(self):
        cfg = TrainConfig.from_dict({"parameterization": "dense",
                                     "hidden_modes": "none",
                                     "input_modes": "none"})
        assert cfg.hidden == 100

    def test_hidden_must_match_mode_product(self):
        with pytest.raises(ConfigError, match="hidden"):
            TrainConfig.from_dict({"hidden_modes": "8x4x8x4"})  # hidden still 100

    def test_hidden_zero_means_derive_from_modes(self):
        cfg = TrainConfig.from_dict({"hidden": "0", "hidden_modes": "8x4x8x4",
                                     "input_modes": "4x4x4x4", "proj": "256"})
        assert cfg.hidden == 1024

    def test_input_modes_must_match_cell_input(self):
        # proj 32 but input modes multiply to 64
        with pytest.raises(ConfigError, match="input_modes"):
            TrainConfig.from_dict({"input_modes": "8x8"})

    def test_input_modes_against_frame_dim_when_no_projection(self):
        cfg = TrainConfig.from_dict({"proj": "0", "task": "mnist-row",
                                     "input_modes": "4x7"})
        assert cfg.cell_input_dim() == 28

    def test_frame_dims(self):
        dims = {"mnist-row": 28, "mnist-pixel": 1, "mnist-permuted": 1,
                "pianoroll": 88}
        for task, dim in dims.items():
            cfg = TrainConfig()
            cfg.task = task
            assert cfg.frame_dim() == dim

    def test_classification_flag(self):
        cfg = TrainConfig()
        assert cfg.is_classification()
        cfg.task = "pianoroll"
        assert not cfg.is_classification()


class TestResolvedDump:
    def test_round_trip(self):
        cfg = TrainConfig.from_dict({"task": "pianoroll", "model": "srnn",
                                     "hidden": "0", "hidden_modes": "8x4x8x4",
                                     "input_modes": "4x4x4x4", "proj": "256",
                                     "rank": "5", "lr": "0.01",
                                     "early_stop": "true"})
        again = TrainConfig.from_dict(parse_kv(cfg.to_text()))
        assert again == cfg

    def test_round_trip_dense(self):
        cfg = TrainConfig.from_dict({"parameterization": "dense",
                                     "hidden_modes": "none",
                                     "input_modes": "none"})
        assert TrainConfig.from_dict(parse_kv(cfg.to_text())) == cfg

    def test_dump_contains_every_field(self):
        cfg = TrainConfig.from_dict({})
        dumped = parse_kv(cfg.to_text())
        assert set(dumped) == set(TrainConfig.field_names())

    def test_dump_preserves_float_precision(self):
        cfg = TrainConfig.from_dict({"lr": "0.1000000000000123"})
        again = TrainConfig.from_dict(parse_kv(cfg.to_text()))
        assert again.lr == cfg.lr

    def test_digest_stable_and_sensitive(self):
        cfg = TrainConfig.from_dict({})
        h1 = cfg.digest()
        assert h1 == TrainConfig.from_dict({}).digest()
        assert len(h1) == 12
        other = TrainConfig.from_dict({"epochs": "6"})
        assert other.digest() != h1
