import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recolor_fad.config import ConfigError, RunConfig, coerce, load_config, parse_config_text


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.recolor().num_colors == cfg.colors
    assert cfg.hyper().lr == cfg.lr
    assert cfg.loss().rec_mode == cfg.rec_mode


def test_roundtrip_through_file(tmp_path):
    cfg = RunConfig(colors=16, temperature=0.001, fusion="add", encoder_channels="4,8,8",
                    freeze_recolor=True, out_dir=str(tmp_path))
    path = cfg.save(tmp_path / "config.txt")
    assert load_config(path) == cfg


def test_overrides_win_and_none_is_ignored(tmp_path):
    path = RunConfig(colors=8).save(tmp_path / "c.txt")
    cfg = load_config(path, colors="2", lr=None)
    assert cfg.colors == 2 and cfg.lr == RunConfig().lr


def test_comments_and_blank_lines():
    d = parse_config_text("# header\n\ncolors = 4  # inline\nfusion=sub\n")
    assert d == {"colors": 4, "fusion": "sub"}


def test_bad_line_reports_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("colors = 4\nnonsense\n")


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        coerce("colour", "4")


@pytest.mark.parametrize("key,raw", [("colors", "two"), ("cosine", "maybe"), ("lr", "fast")])
def test_bad_values(key, raw):
    with pytest.raises(ConfigError):
        coerce(key, raw)


@pytest.mark.parametrize("kw", [dict(temperature=0), dict(colors=0), dict(classifier="vgg"),
                                dict(fusion="mul"), dict(eval_path="dev"), dict(init="warm"),
                                dict(rec_mode="none"), dict(lr=0), dict(batch_size=0)])
def test_validation_rejects(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw).validate()


def test_bool_spellings():
    assert coerce("cosine", "true") is True
    assert coerce("cosine", "False") is False


@settings(max_examples=40, deadline=None)
@given(colors=st.integers(1, 32), tau=st.floats(1e-5, 10, allow_nan=False),
       lam=st.floats(0, 10, allow_nan=False), seed=st.integers(0, 2**31 - 1))
def test_text_roundtrip_property(colors, tau, lam, seed):
    cfg = RunConfig(colors=colors, temperature=tau, rec_weight=lam, seed=seed)
    assert load_config(None, **parse_config_text(cfg.to_text())) == cfg
