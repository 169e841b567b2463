import pytest

from tricdr.config import (ABLATION_ROWS, VARIANTS, ConfigError, RunConfig, TrainConfig, dump_config,
                           parse_config, parse_config_text, variant)


def test_defaults_echo_published_settings():
    cfg = parse_config()
    assert (cfg.lr, cfg.batch_size, cfg.d, cfg.max_len, cfg.tau) == (0.0005, 120, 64, 200, 0.1)
    assert cfg.lambdas == (1.0, 1.0, 1.0) and cfg.n_neg == 1 and not cfg.sliding_window


def test_minimal_file_gives_defaults(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("# nothing but a comment\n\n")
    assert parse_config(p) == RunConfig()


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("lr = 0.0005\nd = 32  # trailing comment\n")
    cfg = parse_config(p, {"lr": "0.001"})
    assert cfg.lr == 0.001 and cfg.d == 32


def test_type_error_names_the_key():
    with pytest.raises(ConfigError, match="lr"):
        parse_config_text("lr = fast")
    with pytest.raises(ConfigError, match="sliding_window"):
        parse_config_text("sliding_window = maybe")
    with pytest.raises(ConfigError, match="lambdas"):
        parse_config_text("lambdas = 1,2")


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="learning_rate"):
        parse_config_text("learning_rate = 0.1")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(None, {"bogus": "1"})
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words")


def test_values_parse_to_field_types():
    vals = parse_config_text("lambdas = 100:1:1\nsource_len = 3,9\npretrain = off\nencoder = gru\nseed = 4")
    assert vals == {"lambdas": (100.0, 1.0, 1.0), "source_len": (3, 9), "pretrain": False,
                    "encoder": "gru", "seed": 4}


@pytest.mark.parametrize("bad", [dict(lr=0), dict(tau=-1), dict(lambda_fdm=-0.1), dict(lambdas=(1, -1, 1)),
                                 dict(domains="TX"), dict(domains="TT"), dict(domains="ST"),
                                 dict(d=6, n_heads=4), dict(dropout=1.0), dict(dtype="float16"),
                                 dict(encoder="lstm"), dict(mixed_init="source")])
def test_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(split="train")
    with pytest.raises(ConfigError):
        RunConfig(rho=1.5)


def test_dump_round_trips():
    cfg = RunConfig(lr=0.002, lambdas=(100.0, 1.0, 1.0), domains="MT", use_tca=True, variants="T,full")
    assert parse_config_text(dump_config(cfg)) == {k: getattr(cfg, k) for k in parse_config_text(dump_config(cfg))}
    assert RunConfig(**parse_config_text(dump_config(cfg))) == cfg


def test_variants():
    base = TrainConfig()
    assert set(ABLATION_ROWS) <= set(VARIANTS)
    assert variant(base, "full") == base
    t = variant(base, "T")
    assert t.domains == "T" and not t.use_tca and t.lambda_csm == t.lambda_fdm == 0
    assert variant(base, "w/o TCA").use_tca is False and variant(base, "w/o TCA").lambda_fdm > 0
    assert variant(base, "w/o FDM").lambda_fdm == 0 and variant(base, "w/o FDM").lambda_csm > 0
    assert variant(base, "S+T+M").domain_order == ("M", "S", "T")
    with pytest.raises(ConfigError):
        variant(base, "w/o everything")


def test_fingerprint_tracks_every_field():
    a = TrainConfig()
    assert a.fingerprint() == TrainConfig().fingerprint()
    assert a.fingerprint() != a.replace(gamma=0.6).fingerprint()
    assert a.fingerprint() != a.replace(seed=1).fingerprint()
