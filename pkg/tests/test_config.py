"""Test cases for config module."""

# Import built-in modules
import json

# Import third-party modules
from pydantic import ValidationError
import pytest

# Import local modules
from authguard.config import ABLATION_PRESETS
from authguard.config import LossConfig
from authguard.config import ProjectorConfig
from authguard.config import RunConfig
from authguard.config import ToyLMConfig
from authguard.config import TrainConfig
from authguard.config import VisionBackboneConfig
from authguard.config import apply_overrides
from authguard.config import load_run_config
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode


def test_defaults():
    """Test the desk-scale defaults."""
    config = RunConfig()
    assert config.backbone.num_patches == 64
    assert config.train.lr_base == 3e-4
    assert config.train.warmup_steps == 100
    assert config.train.loss.alpha == 0.05
    assert config.train.loss.temperature_w == pytest.approx(1 / 0.07)
    assert config.train.preset_name == "full"
    assert config.projector.hidden_dim == 2 * config.lm.d_l
    assert config.metrics.rouge_beta == 1.2
    assert config.metrics.cider_sigma == 6.0
    assert config.stage2.projector_epochs == 1
    assert config.stage2.finetune_epochs == 1
    assert config.stage2.projector_lr == 1e-3


@pytest.mark.parametrize(
    "kwargs",
    [
        {"image_side": 60, "patch_size": 8},
        {"embed_dim": 30, "heads": 4},
        {"layers": 1},
    ],
)
def test_backbone_validation(kwargs):
    """Test divisibility and depth checks."""
    with pytest.raises(ValidationError):
        VisionBackboneConfig(**kwargs)


def test_train_config_batch_rule():
    """Test that contrastive training needs two samples per batch."""
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=1)
    assert TrainConfig(batch_size=1, use_contrastive=False).batch_size == 1


def test_loss_config_temperature_range():
    """Test the temperature bounds."""
    with pytest.raises(ValidationError):
        LossConfig(temperature_w=0.5)
    with pytest.raises(ValidationError):
        LossConfig(temperature_w=101.0)


def test_unknown_field_rejected():
    """Test that typos in config keys fail loudly."""
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=1e-3)


@pytest.mark.parametrize("preset", list(ABLATION_PRESETS))
def test_with_preset(preset):
    """Test that presets set exactly their three flags."""
    cfg = TrainConfig(lr_base=1e-3).with_preset(preset)
    assert (cfg.use_contrastive, cfg.use_uncertainty, cfg.use_adapter) == ABLATION_PRESETS[preset]
    assert cfg.preset_name == preset
    assert cfg.lr_base == 1e-3


def test_with_preset_unknown():
    """Test that an unknown preset is a config error."""
    with pytest.raises(AuthGuardError) as exc_info:
        TrainConfig().with_preset("everything")
    assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR


def test_custom_preset_name():
    """Test flags that match no preset."""
    assert TrainConfig(use_contrastive=False, use_adapter=True).preset_name == "custom"


def test_run_config_dimension_checks():
    """Test that projector dimensions must match the backbone and LM."""
    with pytest.raises(ValidationError):
        RunConfig(projector=ProjectorConfig(d_v=64))
    with pytest.raises(ValidationError):
        RunConfig(lm=ToyLMConfig(d_l=128))


def test_hash_is_stable_and_sensitive(tiny_config):
    """Test that equal configs hash equal and any change alters the hash."""
    same = RunConfig.model_validate(tiny_config.model_dump())
    assert same.hash() == tiny_config.hash()
    changed = RunConfig.model_validate({**tiny_config.model_dump(), "metrics": {"threshold": 0.4}})
    assert changed.hash() != tiny_config.hash()


def test_save_and_load(tiny_config, tmp_path):
    """Test JSON persistence."""
    path = tiny_config.save(tmp_path / "cfg" / "config.json")
    assert load_run_config(path) == tiny_config


def test_apply_overrides_parses_values():
    """Test JSON literal parsing and nested sections."""
    overrides = ["train.lr_base=5e-6", "--train.loss.alpha=0.1", "train.exclude_kinds=[\"mouth_warp\"]"]
    payload = apply_overrides({}, overrides)
    assert payload == {"train": {"lr_base": 5e-6, "loss": {"alpha": 0.1}, "exclude_kinds": ["mouth_warp"]}}
    assert apply_overrides({}, ["projector.token_source=plain"]) == {"projector": {"token_source": "plain"}}


@pytest.mark.parametrize("expression", ["train.lr_base", "=3", "train.lr_base.x=1"])
def test_apply_overrides_malformed(expression):
    """Test malformed expressions and paths through a leaf value."""
    with pytest.raises(AuthGuardError) as exc_info:
        apply_overrides({"train": {"lr_base": 1.0}}, [expression])
    assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR


def test_load_run_config_with_overrides(tmp_path):
    """Test file values, overrides on top and validation errors."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"train": {"epochs": 2}}), encoding="utf-8")
    config = load_run_config(path, ["train.seed=7"])
    assert config.train.epochs == 2
    assert config.train.seed == 7
    with pytest.raises(AuthGuardError) as exc_info:
        load_run_config(path, ["train.epochs=0"])
    assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR


def test_load_run_config_errors(tmp_path):
    """Test missing and malformed files."""
    with pytest.raises(AuthGuardError) as exc_info:
        load_run_config(tmp_path / "missing.json")
    assert exc_info.value.error_code == ErrorCode.FILE_ERROR
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(AuthGuardError) as exc_info:
        load_run_config(bad)
    assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR
