"""Stage-1 training of the expert encoder.

Adam with linear warmup and cosine decay, one sampled caption sentence per
image per step, seeded shuffling and noise, validation AUC per epoch, and
best/final checkpoints. The four ablation presets switch the contrastive term,
the sampled embedding and the adaptive gate on and off.
"""

# Import built-in modules
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
import json
import math
from pathlib import Path
from typing import Any

# Import third-party modules
from loguru import logger
import numpy as np
import torch
from torch import nn

# Import local modules
from authguard.app import SEED_CAPTION
from authguard.app import SEED_INIT
from authguard.app import SEED_NOISE
from authguard.app import SEED_SHUFFLE
from authguard.app import SEED_TEXT_ENCODER
from authguard.app import derive_seed
from authguard.checkpoint import Checkpoint
from authguard.checkpoint import load_checkpoint
from authguard.checkpoint import save_checkpoint
from authguard.config import ABLATION_PRESETS
from authguard.config import RunConfig
from authguard.config import TrainConfig
from authguard.encoder import EmbeddingDistribution
from authguard.encoder import ExpertEncoder
from authguard.encoder import TextEncoder
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.metrics import Prediction
from authguard.metrics import evaluate_predictions
from authguard.objectives import LossTerms
from authguard.objectives import Temperature
from authguard.objectives import bce_loss
from authguard.objectives import contrastive_loss
from authguard.objectives import kl_regularizer
from authguard.objectives import total_loss
from authguard.synthface import LabeledImage
from authguard.synthface import Split
from authguard.synthface import SynthCorpus
from authguard.utils import append_jsonl
from authguard.utils import grad_norm
from authguard.utils import parameter_checksum

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
METRICS_FILE = "metrics.jsonl"
BEST_CHECKPOINT = "best.pt"
FINAL_CHECKPOINT = "final.pt"
UNTRAINED_CHECKPOINT = "untrained.pt"
ABLATION_FILE = "ablation.json"
EVAL_BATCH_SIZE = 64


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Learning rate after ``step`` of ``total_steps`` updates.

    Linear warmup from 0 to ``lr_base`` over ``warmup_steps``, then cosine decay
    to 0 at ``total_steps``.

    Raises:
        AuthGuardError: If ``total_steps <= warmup_steps`` or ``step`` is out of range.

    """
    if total_steps <= cfg.warmup_steps:
        raise AuthGuardError(
            f"total_steps ({total_steps}) must exceed warmup_steps ({cfg.warmup_steps})", ErrorCode.CONFIG_ERROR
        )
    if not 0 <= step <= total_steps:
        raise AuthGuardError(f"step {step} outside [0, {total_steps}]", ErrorCode.VALIDATION_ERROR)
    if step < cfg.warmup_steps:
        return cfg.lr_base * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (total_steps - cfg.warmup_steps)
    return cfg.lr_base * 0.5 * (1 + math.cos(math.pi * progress))


class Stage1Model(nn.Module):
    """Expert encoder, learnable temperature and the frozen text encoder."""

    def __init__(self, config: RunConfig):
        super().__init__()
        train_cfg = config.train
        backbone = config.backbone
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(train_cfg.seed, SEED_INIT))
            self.encoder = ExpertEncoder(backbone, train_cfg.use_uncertainty, train_cfg.use_adapter)
            self.encoder.statistical.identity_init_()
        self.temperature = Temperature(train_cfg.loss.temperature_w)
        self.text_encoder = TextEncoder(
            backbone.embed_dim,
            buckets=backbone.text_vocab_buckets,
            layers=backbone.text_layers,
            heads=backbone.heads,
            seed=derive_seed(train_cfg.seed, SEED_TEXT_ENCODER),
        )

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [*self.encoder.parameters(), *self.temperature.parameters()]

    def components(self) -> dict[str, nn.Module]:
        return {"encoder": self.encoder, "temperature": self.temperature, "text_encoder": self.text_encoder}


def build_optimizer(model: Stage1Model) -> torch.optim.Adam:
    return torch.optim.Adam(model.trainable_parameters(), lr=0.0, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=0.0)


@dataclass
class Stage1Batch:
    """Images, labels and (optionally) one caption sentence per image."""

    ids: list[str]
    images: torch.Tensor
    labels: torch.Tensor
    captions: list[str] | None = None


def make_batch(
    samples: Sequence[LabeledImage],
    captions: Mapping[str, Sequence[str]] | None = None,
    rng: np.random.Generator | None = None,
) -> Stage1Batch:
    """Stack samples into tensors and draw one caption sentence per image.

    Raises:
        AuthGuardError: If captions are requested but an image has none.

    """
    images = torch.from_numpy(np.stack([sample.pixels for sample in samples]))
    labels = torch.tensor([int(sample.label) for sample in samples], dtype=torch.float32)
    chosen = None
    if captions is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        chosen = []
        for sample in samples:
            sentences = captions.get(sample.id)
            if not sentences:
                raise AuthGuardError(f"No caption sentences for image {sample.id}", ErrorCode.CONFIG_ERROR)
            chosen.append(sentences[int(rng.integers(len(sentences)))])
    return Stage1Batch(ids=[sample.id for sample in samples], images=images, labels=labels, captions=chosen)


@dataclass
class StepReport:
    """Losses, gate statistics and gradient norms of one update."""

    step: int
    lr: float
    losses: dict[str, float]
    gate_mean: list[float]
    grad_norms: dict[str, float]

    def log_row(self) -> dict[str, Any]:
        return {"step": self.step, "lr": self.lr, **self.losses, "gate_w1_mean": self.gate_mean[0]}


def train_step(
    model: Stage1Model,
    optimizer: torch.optim.Optimizer,
    batch: Stage1Batch,
    cfg: TrainConfig,
    lr: float,
    eps: torch.Tensor | None = None,
    step: int = 0,
) -> StepReport:
    """One optimisation step over a batch.

    Args:
        model: Model to update.
        optimizer: Adam over ``model.trainable_parameters()``.
        batch: Images, labels and sampled captions.
        cfg: Ablation flags and loss weights.
        lr: Learning rate for this update.
        eps: Reparameterization noise of shape (B, d_v).
        step: Global step number, for reporting.

    Returns:
        StepReport: Per-term losses, mean gate weights and gradient norms.

    Raises:
        AuthGuardError: If any loss term is not finite.

    """
    model.encoder.train()
    features = model.encoder(batch.images, eps=eps)
    zero = features.logit.new_zeros(())
    cls = bce_loss(features.logit, batch.labels)
    cst = zero
    if cfg.use_contrastive:
        if batch.captions is None:
            raise AuthGuardError("Contrastive training needs captions", ErrorCode.CONFIG_ERROR)
        text = model.text_encoder(batch.captions)
        cst = contrastive_loss(features.z, text, model.temperature())
    kl = zero
    if cfg.use_uncertainty and cfg.loss.kl_weight > 0:
        kl = kl_regularizer(EmbeddingDistribution(features.mu, features.sigma))
    terms = LossTerms(total=total_loss(cls, cst, kl, cfg.loss), cls=cls, cst=cst, kl=kl)
    try:
        terms.check_finite()
    except AuthGuardError:
        logger.error(f"Step {step}: non-finite loss, per-term dump {terms.as_dict()}")
        raise

    optimizer.zero_grad(set_to_none=True)
    terms.total.backward()
    norms = {name: grad_norm(params) for name, params in model.encoder.parameter_groups().items()}
    norms["temperature"] = grad_norm(model.temperature.parameters())
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), cfg.grad_clip)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    model.temperature.clamp_()

    return StepReport(
        step=step,
        lr=lr,
        losses=terms.as_dict(),
        gate_mean=features.w.detach().mean(dim=0).tolist(),
        grad_norms=norms,
    )


@torch.no_grad()
def predict(model: Stage1Model, samples: Sequence[LabeledImage], batch_size: int = EVAL_BATCH_SIZE) -> list[Prediction]:
    """Classifier probabilities and uncertainty scores in eval mode."""
    model.encoder.eval()
    predictions = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        features = model.encoder(make_batch(chunk).images)
        for sample, score, uncertainty in zip(chunk, features.probability.tolist(), features.uncertainty.tolist()):
            predictions.append(
                Prediction(
                    image_id=sample.id,
                    score=score,
                    label=int(sample.label),
                    artifact_kind=sample.artifact_kind.value,
                    uncertainty=uncertainty,
                )
            )
    return predictions


def evaluate_encoder(model: Stage1Model, samples: Sequence[LabeledImage], config: RunConfig) -> dict[str, Any] | None:
    """AUC, accuracy, per-kind AUC and mean uncertainty, or None if a class is missing."""
    if len({int(sample.label) for sample in samples}) < 2:
        return None
    report = evaluate_predictions(predict(model, samples), config.metrics, config.hash())
    return report.model_dump(include={"auc", "accuracy", "n", "per_kind_auc", "mean_uncertainty"})


@dataclass
class Stage1Result:
    """Artifacts and scores of a stage-1 run."""

    out_dir: Path
    best_checkpoint: Path
    final_checkpoint: Path
    best_val_auc: float | None
    test: dict[str, Any] | None
    history: list[dict[str, Any]] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)


def _training_samples(corpus: SynthCorpus, cfg: TrainConfig) -> list[LabeledImage]:
    excluded = set(cfg.exclude_kinds)
    samples = [sample for sample in corpus.by_split(Split.TRAIN) if sample.artifact_kind.value not in excluded]
    if excluded:
        logger.info(f"Excluding artifact kinds {sorted(excluded)} from training, {len(samples)} samples remain")
    if not samples:
        raise AuthGuardError("The training split is empty", ErrorCode.EMPTY_INPUT)
    return samples


def train_stage1(
    corpus: SynthCorpus,
    captions: Mapping[str, Sequence[str]] | None,
    config: RunConfig,
    out_dir: str | Path,
) -> Stage1Result:
    """Train the expert encoder on the train split.

    Args:
        corpus: Corpus with split assignment.
        captions: Image id to caption sentences; required when contrastive.
        config: Run configuration.
        out_dir: Directory for ``metrics.jsonl`` and the checkpoints.

    Returns:
        Stage1Result: Checkpoint paths, best validation AUC and final test scores.

    Raises:
        AuthGuardError: On missing captions or an invalid schedule.

    """
    cfg = config.train
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples = _training_samples(corpus, cfg)
    if cfg.use_contrastive:
        missing = [s.id for s in train_samples if not (captions or {}).get(s.id)]
        if missing:
            raise AuthGuardError(
                f"Contrastive training needs captions for every train image; {len(missing)} missing "
                f"(e.g. {', '.join(missing[:3])})",
                ErrorCode.CONFIG_ERROR,
            )
    val_samples = corpus.by_split(Split.VAL)
    test_samples = corpus.by_split(Split.TEST)
    steps_per_epoch = math.ceil(len(train_samples) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    lr_at(0, total_steps, cfg)

    model = Stage1Model(config)
    optimizer = build_optimizer(model)
    text_checksum = parameter_checksum(model.text_encoder)
    shuffle_seed = derive_seed(cfg.seed, SEED_SHUFFLE)
    caption_rng = np.random.default_rng(derive_seed(cfg.seed, SEED_CAPTION))
    noise = torch.Generator().manual_seed(derive_seed(cfg.seed, SEED_NOISE))
    metrics_path = out_dir / METRICS_FILE
    metrics_path.write_text("", encoding="utf-8")
    best_path = out_dir / BEST_CHECKPOINT
    final_path = out_dir / FINAL_CHECKPOINT
    best_auc: float | None = None
    history: list[dict[str, Any]] = []
    provenance = {"seed": cfg.seed, "preset": cfg.preset_name, "corpus_seed": corpus.seed}

    logger.info(
        f"Stage 1: preset={cfg.preset_name} train={len(train_samples)} val={len(val_samples)} "
        f"epochs={cfg.epochs} steps={total_steps}"
    )
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(train_samples))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            batch = make_batch(chunk, captions if cfg.use_contrastive else None, caption_rng)
            eps = None
            if cfg.use_uncertainty:
                eps = torch.randn((len(chunk), config.backbone.embed_dim), generator=noise)
            # 0-based update index, so lr_at(total) = 0 is never applied
            lr = lr_at(step, total_steps, cfg)
            step += 1
            report = train_step(model, optimizer, batch, cfg, lr, eps=eps, step=step)
            append_jsonl(metrics_path, report.log_row())
            logger.debug(f"step {step}: {report.losses}")

        val = evaluate_encoder(model, val_samples, config)
        val_auc = val["auc"] if val else None
        row = {"epoch": epoch, "step": step, "val_auc": val_auc, "val": val}
        append_jsonl(metrics_path, row)
        history.append(row)
        logger.info(f"Epoch {epoch}/{cfg.epochs}: val_auc={val_auc}")
        if val_auc is not None and (best_auc is None or val_auc > best_auc):
            best_auc = val_auc
            components = model.components()
            save_checkpoint(best_path, "encoder", config, components, epoch=epoch, val_auc=val_auc, **provenance)

    if parameter_checksum(model.text_encoder) != text_checksum:
        raise AuthGuardError("Text encoder parameters changed during training", ErrorCode.NUMERICAL_ERROR)
    final_auc = history[-1]["val_auc"]
    components = model.components()
    save_checkpoint(final_path, "encoder", config, components, epoch=cfg.epochs, val_auc=final_auc, **provenance)
    if best_auc is None:
        logger.warning("Validation split lacks a class; best checkpoint is the final one")
        save_checkpoint(best_path, "encoder", config, model.components(), epoch=cfg.epochs, val_auc=None, **provenance)

    test = evaluate_encoder(model, test_samples, config)
    logger.info(f"Stage 1 done: best_val_auc={best_auc} test={test}")
    return Stage1Result(
        out_dir=out_dir,
        best_checkpoint=best_path,
        final_checkpoint=final_path,
        best_val_auc=best_auc,
        test=test,
        history=history,
        checksums={name: parameter_checksum(module) for name, module in model.components().items()},
    )


def load_stage1(path: str | Path) -> tuple[Stage1Model, Checkpoint]:
    """Rebuild a stage-1 model from its checkpoint."""
    checkpoint = load_checkpoint(path, kind="encoder")
    model = Stage1Model(checkpoint.config)
    for name, module in model.components().items():
        checkpoint.restore(name, module)
    model.eval()
    return model, checkpoint


def save_untrained_stage1(config: RunConfig, path: str | Path) -> Path:
    """Checkpoint a freshly initialised stage-1 model.

    Stage 2 on top of it is the fixed, untrained vision encoder baseline.
    """
    model = Stage1Model(config)
    logger.info(f"Saving an untrained encoder (seed {config.train.seed}) to {path}")
    return save_checkpoint(
        path,
        "encoder",
        config,
        model.components(),
        epoch=0,
        val_auc=None,
        seed=config.train.seed,
        preset=config.train.preset_name,
        untrained=True,
    )


def update_ablation_table(path: str | Path, row: dict[str, Any]) -> list[dict[str, Any]]:
    """Insert or replace the row of ``row["preset"]`` in an ablation JSON table."""
    path = Path(path)
    rows: list[dict[str, Any]] = []
    if path.is_file():
        rows = json.loads(path.read_text(encoding="utf-8")).get("rows", [])
    rows = [existing for existing in rows if existing.get("preset") != row["preset"]] + [row]
    order = list(ABLATION_PRESETS)
    rows.sort(key=lambda r: order.index(r["preset"]) if r["preset"] in order else len(order))
    path.write_text(json.dumps({"rows": rows}, indent=2), encoding="utf-8")
    return rows


def ablation_row(result: Stage1Result, cfg: TrainConfig) -> dict[str, Any]:
    return {
        "preset": cfg.preset_name,
        "use_contrastive": cfg.use_contrastive,
        "use_uncertainty": cfg.use_uncertainty,
        "use_adapter": cfg.use_adapter,
        "val_auc": result.best_val_auc,
        "test_auc": result.test["auc"] if result.test else None,
        "checkpoint": str(result.final_checkpoint),
    }


def run_ablation_sweep(
    corpus: SynthCorpus,
    captions: Mapping[str, Sequence[str]],
    config: RunConfig,
    out_dir: str | Path,
    presets: Sequence[str] = tuple(ABLATION_PRESETS),
) -> list[dict[str, Any]]:
    """Train one encoder per ablation preset and write ``ablation.json``.

    Returns:
        list[dict]: One row per preset with flags, validation and test AUC.

    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict[str, Any]] = []
    for preset in presets:
        run_config = config.model_copy(update={"train": config.train.with_preset(preset)})
        result = train_stage1(corpus, captions, run_config, out_dir / preset)
        rows = update_ablation_table(out_dir / ABLATION_FILE, ablation_row(result, run_config.train))
    return rows
