"""Run configuration for AuthGuard.

All knobs of a run live in one :class:`RunConfig` that is serialized to JSON and
embedded in every checkpoint. Fields can be overridden from the command line with
dot paths, e.g. ``train.lr_base=5e-6`` or ``train.loss.alpha=0.1``.
"""

# Import built-in modules
from collections.abc import Iterable
import json
from pathlib import Path
from typing import Any
from typing import Literal

# Import third-party modules
from loguru import logger
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import model_validator

# Import local modules
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.utils import config_hash

AblationPreset = Literal["none", "semantic", "uncertainty", "full"]

# Flags (use_contrastive, use_uncertainty, use_adapter) of the four ablation rows
ABLATION_PRESETS: dict[str, tuple[bool, bool, bool]] = {
    "none": (False, False, False),
    "semantic": (True, False, False),
    "uncertainty": (True, True, False),
    "full": (True, True, True),
}


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class VisionBackboneConfig(_Config):
    """Toy ViT backbone shape."""

    image_side: int = Field(64, gt=0)
    patch_size: int = Field(8, gt=0)
    embed_dim: int = Field(128, gt=0, description="d_v, shared by every vision and text head")
    layers: int = Field(4, ge=2, description="at least two so a second-to-last layer exists")
    heads: int = Field(4, gt=0)
    mlp_ratio: float = Field(4.0, gt=0)
    text_vocab_buckets: int = Field(8192, gt=0)
    text_layers: int = Field(2, gt=0)

    @model_validator(mode="after")
    def _check_divisibility(self) -> "VisionBackboneConfig":
        if self.image_side % self.patch_size:
            raise ValueError(f"image_side {self.image_side} is not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_side // self.patch_size) ** 2


class LossConfig(_Config):
    """Weights of the stage-1 objective ``beta*L_cls + alpha*L_cst + kl_weight*L_kl``."""

    alpha: float = Field(0.05, ge=0)
    beta: float = Field(1.0, ge=0)
    temperature_w: float = Field(1 / 0.07, ge=1.0, le=100.0)
    kl_weight: float = Field(0.0, ge=0)


class TrainConfig(_Config):
    """Stage-1 optimisation settings and the ablation switchboard."""

    # 5e-6 suits a pretrained ViT-L; the toy backbone trains from scratch
    lr_base: float = Field(3e-4, gt=0)
    warmup_steps: int = Field(100, ge=0)
    epochs: int = Field(5, ge=1)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    grad_clip: float | None = Field(1.0, gt=0)
    use_contrastive: bool = True
    use_uncertainty: bool = True
    use_adapter: bool = True
    exclude_kinds: list[str] = Field(default_factory=list)
    loss: LossConfig = Field(default_factory=LossConfig)

    @model_validator(mode="after")
    def _check_batch(self) -> "TrainConfig":
        if self.use_contrastive and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when use_contrastive is enabled")
        return self

    def with_preset(self, preset: str) -> "TrainConfig":
        """Return a copy with the ablation flags of ``preset``."""
        if preset not in ABLATION_PRESETS:
            raise AuthGuardError(
                f"Unknown ablation preset '{preset}'. Available: {', '.join(ABLATION_PRESETS)}",
                ErrorCode.CONFIG_ERROR,
            )
        contrastive, uncertainty, adapter = ABLATION_PRESETS[preset]
        payload = self.model_dump()
        payload.update(use_contrastive=contrastive, use_uncertainty=uncertainty, use_adapter=adapter)
        return TrainConfig.model_validate(payload)

    @property
    def preset_name(self) -> str:
        flags = (self.use_contrastive, self.use_uncertainty, self.use_adapter)
        for name, preset_flags in ABLATION_PRESETS.items():
            if preset_flags == flags:
                return name
        return "custom"


class ProjectorConfig(_Config):
    """Two-layer GELU MLP from vision space to LM space."""

    d_v: int = Field(128, gt=0)
    d_l: int = Field(256, gt=0)
    hidden: int | None = Field(None, gt=0, description="defaults to 2*d_l")
    token_source: Literal["adapter", "plain"] = "adapter"

    @property
    def hidden_dim(self) -> int:
        return self.hidden if self.hidden is not None else 2 * self.d_l


class ToyLMConfig(_Config):
    """Decoder-only toy language model."""

    vocab_size: int = Field(512, gt=4)
    layers: int = Field(2, gt=0)
    d_l: int = Field(256, gt=0)
    heads: int = Field(4, gt=0)
    max_seq: int = Field(256, gt=0)

    @model_validator(mode="after")
    def _check_heads(self) -> "ToyLMConfig":
        if self.d_l % self.heads:
            raise ValueError(f"d_l {self.d_l} is not divisible by heads {self.heads}")
        return self


class Stage2Config(_Config):
    """Two sub-step instruction tuning schedule."""

    projector_lr: float = Field(1e-3, gt=0)
    projector_epochs: int = Field(1, ge=0)
    # 2e-5 suits a pretrained 7B LM; the toy LM starts from random weights
    finetune_lr: float = Field(5e-4, gt=0)
    finetune_epochs: int = Field(1, ge=0)
    batch_size: int = Field(16, ge=1)
    lora_rank: int = Field(0, ge=0)
    max_new_tokens: int = Field(48, gt=0)


class MetricsConfig(_Config):
    """Frozen metric parameters."""

    threshold: float = 0.5
    rouge_beta: float = Field(1.2, gt=0)
    cider_sigma: float = Field(6.0, gt=0)
    bleu_epsilon: float = Field(1e-9, gt=0)


class RunConfig(_Config):
    """Everything needed to reproduce a run."""

    backbone: VisionBackboneConfig = Field(default_factory=VisionBackboneConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    projector: ProjectorConfig = Field(default_factory=ProjectorConfig)
    lm: ToyLMConfig = Field(default_factory=ToyLMConfig)
    stage2: Stage2Config = Field(default_factory=Stage2Config)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    @model_validator(mode="after")
    def _check_dims(self) -> "RunConfig":
        if self.projector.d_v != self.backbone.embed_dim:
            raise ValueError(
                f"projector.d_v ({self.projector.d_v}) must equal backbone.embed_dim ({self.backbone.embed_dim})"
            )
        if self.projector.d_l != self.lm.d_l:
            raise ValueError(f"projector.d_l ({self.projector.d_l}) must equal lm.d_l ({self.lm.d_l})")
        return self

    def hash(self) -> str:
        """Canonical hash of the configuration."""
        return config_hash(self.model_dump(mode="json"))

    def save(self, path: str | Path) -> Path:
        """Write the configuration as indented JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(payload: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``a.b.c=value`` overrides to a nested configuration dictionary.

    Values are parsed as JSON literals (numbers, booleans, lists, null) and fall
    back to plain strings.

    Args:
        payload: Nested configuration dump; modified in place.
        overrides: Override expressions.

    Returns:
        dict: The updated payload.

    Raises:
        AuthGuardError: If an expression is malformed or addresses a non-section.

    """
    for expression in overrides:
        key, sep, raw = expression.lstrip("-").partition("=")
        if not sep or not key:
            raise AuthGuardError(
                f"Override must look like 'section.field=value', got '{expression}'", ErrorCode.CONFIG_ERROR
            )
        *sections, leaf = key.split(".")
        node = payload
        for section in sections:
            child = node.setdefault(section, {})
            if not isinstance(child, dict):
                raise AuthGuardError(f"'{section}' in '{key}' is not a config section", ErrorCode.CONFIG_ERROR)
            node = child
        node[leaf] = _parse_value(raw)
        logger.debug(f"Config override {key} = {node[leaf]!r}")
    return payload


def load_run_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Load a run configuration from JSON and apply dot-path overrides.

    Args:
        path: JSON config file; defaults are used when None.
        overrides: ``section.field=value`` expressions.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        AuthGuardError: If the file is unreadable or the result fails validation.

    """
    payload: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise AuthGuardError(f"Config file not found: {path}", ErrorCode.FILE_ERROR)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise AuthGuardError(f"Invalid JSON in config {path}: {e}", ErrorCode.CONFIG_ERROR) from e
    payload = apply_overrides(payload, overrides)
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise AuthGuardError(f"Invalid configuration: {e}", ErrorCode.CONFIG_ERROR) from e
