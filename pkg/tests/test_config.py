from pathlib import Path

import pytest

from lfgnn.config import RunConfig, format_bands, parse_bands, parse_run_config
from lfgnn.errors import BandError, ConfigError
from lfgnn.signal import DEFAULT_BANDS


def test_ini_round_trip():
    text = RunConfig().to_ini()
    cfg = parse_run_config(text)
    assert cfg.to_ini() == text


def test_file_values_and_flag_overrides():
    cfg = parse_run_config("[causality]\nalpha = 0.05\nseed = 4\n[train]\nouter_folds = 4\n[model]\nhidden_dim = 24\n")
    assert cfg.alpha == 0.05 and cfg.train_config().outer_folds == 4
    assert cfg.model_config().hidden_dim == 24 and cfg.model_config().seed == 4
    over = cfg.with_overrides(alpha=0.2, seed=9, surrogates=None)
    assert over.alpha == 0.2 and over.seed == 9 and over.train_config().seed == 9
    assert over.train_config().outer_folds == 4


def test_paper_protocol_switch():
    cfg = RunConfig().with_overrides(paper_protocol=True)
    t = cfg.train_config()
    assert (t.outer_folds, t.inner_folds, t.stage1_epochs, t.stage2_epochs) == (10, 3, 200, 20)
    assert "paper_protocol = true" in cfg.to_ini()


def test_bands_text():
    assert parse_bands(format_bands(DEFAULT_BANDS)) == DEFAULT_BANDS
    with pytest.raises(ConfigError):
        parse_bands("alpha=8-13")
    with pytest.raises(BandError):
        parse_run_config("[signal]\nbands = high:80-120\n")


def test_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError):
        parse_run_config("[causality]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_run_config("[extras]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_run_config("[causality]\nalpha = lots\n")
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(topk=0)


def test_inline_comments_and_readme_example():
    cfg = parse_run_config("[causality]\nsurrogates = 300   ; more surrogates\n")
    assert cfg.surrogates == 300
    text = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    ini = text.split("```ini\n", 1)[1].split("```", 1)[0]
    assert parse_run_config(ini).train_config().stage1_epochs == 40
