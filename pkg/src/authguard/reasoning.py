"""Stage-2 reasoning head.

The gated class embedding ``e`` (or the plain backbone class token) and the
second-to-last-layer patch tokens of the frozen stage-1 encoder are mapped by a
two-layer GELU projector into the token space of a small decoder-only language
model. Sequences are laid out as::

    [BOS] visual tokens (N_p + 1) question tokens response tokens [EOS]

and the autoregressive loss is averaged over the response and EOS positions.
Training runs two sub-steps: projector only, then projector plus LM (or
projector plus low-rank adapters).
"""

# Import built-in modules
from collections import Counter
from collections.abc import Iterable
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field
import math
from pathlib import Path
import re
from typing import Any
from typing import Literal

# Import third-party modules
from loguru import logger
import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

# Import local modules
from authguard.app import SEED_INIT
from authguard.app import SEED_SHUFFLE
from authguard.app import derive_seed
from authguard.checkpoint import load_checkpoint
from authguard.checkpoint import save_checkpoint
from authguard.config import ProjectorConfig
from authguard.config import RunConfig
from authguard.config import ToyLMConfig
from authguard.datagen import DETECTION_QUESTION
from authguard.datagen import InstructionSample
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.metrics import Prediction
from authguard.synthface import LabeledImage
from authguard.synthface import Split
from authguard.synthface import SynthCorpus
from authguard.train import UNTRAINED_CHECKPOINT
from authguard.train import Stage1Model
from authguard.train import load_stage1
from authguard.train import make_batch
from authguard.train import save_untrained_stage1
from authguard.utils import append_jsonl
from authguard.utils import parameter_checksum

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<image>")
PAD_ID, BOS_ID, EOS_ID, UNK_ID, IMAGE_ID = range(len(SPECIAL_TOKENS))
REASONER_CHECKPOINT = "reasoner.pt"
STAGE2_METRICS_FILE = "stage2_metrics.jsonl"
SEED_REASONER_INIT = f"{SEED_INIT}:reasoner"

_TOKEN_PATTERN = re.compile(r"[a-z0-9]+|[.!?,]")
_FIRST_SENTENCE = re.compile(r"[^.!?]*")

Verdict = Literal["real", "fake"]


class WordTokenizer:
    """Lowercase word-level vocabulary with sentence punctuation kept as tokens."""

    def __init__(self, vocab: Sequence[str]):
        if tuple(vocab[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise AuthGuardError("Vocabulary must start with the special tokens", ErrorCode.VALIDATION_ERROR)
        self.vocab = list(vocab)
        self.index = {token: i for i, token in enumerate(self.vocab)}

    @classmethod
    def build(cls, texts: Iterable[str], vocab_size: int) -> "WordTokenizer":
        """Keep the ``vocab_size - 5`` most frequent tokens, ties broken alphabetically."""
        counts = Counter(token for text in texts for token in _TOKEN_PATTERN.findall(text.lower()))
        ranked = sorted(counts, key=lambda token: (-counts[token], token))
        vocab = [*SPECIAL_TOKENS, *ranked[: vocab_size - len(SPECIAL_TOKENS)]]
        logger.debug(f"Built vocabulary of {len(vocab)} tokens from {len(counts)} distinct words")
        return cls(vocab)

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(token, UNK_ID) for token in _TOKEN_PATTERN.findall(text.lower())]

    def decode(self, ids: Iterable[int]) -> str:
        words = [self.vocab[i] for i in ids if i >= len(SPECIAL_TOKENS) or i == UNK_ID]
        text = " ".join(words)
        text = re.sub(r" ([.!?,])", r"\1", text)
        return text[:1].upper() + text[1:]


class Projector(nn.Module):
    """Shared two-layer GELU MLP from vision space to LM space."""

    def __init__(self, cfg: ProjectorConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = nn.Linear(cfg.d_v, cfg.hidden_dim)
        self.fc2 = nn.Linear(cfg.hidden_dim, cfg.d_l)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(tokens)))


def project_tokens(projector: Projector, patch_tokens: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """Prepend ``e`` to the patch tokens and project every row.

    Args:
        projector: The projector MLP.
        patch_tokens: Shape (N_p, d_v) or (B, N_p, d_v).
        e: Shape (d_v,) or (B, d_v).

    Returns:
        torch.Tensor: Visual tokens of shape (N_p + 1, d_l) or (B, N_p + 1, d_l).

    Raises:
        AuthGuardError: On a dimension mismatch.

    """
    d_v = projector.cfg.d_v
    if patch_tokens.shape[-1] != d_v or e.shape[-1] != d_v or patch_tokens.ndim != e.ndim + 1:
        raise AuthGuardError(
            f"Expected patch tokens (..., N_p, {d_v}) and e (..., {d_v}), got {tuple(patch_tokens.shape)} "
            f"and {tuple(e.shape)}",
            ErrorCode.SHAPE_ERROR,
        )
    return projector(torch.cat([e.unsqueeze(-2), patch_tokens], dim=-2))


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable rank-``r`` update ``B @ A``."""

    def __init__(self, base: nn.Linear, rank: int):
        super().__init__()
        self.base = base
        self.base.requires_grad_(False)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a.T) @ self.lora_b.T


class CausalBlock(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model))

    def forward(self, x: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        y = self.norm1(x)
        attended, _ = self.attn(y, y, y, attn_mask=causal_mask, need_weights=False)
        x = x + attended
        return x + self.mlp(self.norm2(x))


class ToyLM(nn.Module):
    """Decoder-only language model over soft input embeddings."""

    def __init__(self, cfg: ToyLMConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_l)
        self.pos_embed = nn.Embedding(cfg.max_seq, cfg.d_l)
        self.blocks = nn.ModuleList(CausalBlock(cfg.d_l, cfg.heads) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.d_l)
        self.lm_head = nn.Linear(cfg.d_l, cfg.vocab_size)
        nn.init.normal_(self.token_embed.weight, std=0.02)
        nn.init.normal_(self.pos_embed.weight, std=0.02)

    def forward(self, embeds: torch.Tensor) -> torch.Tensor:
        length = embeds.shape[1]
        if length > self.cfg.max_seq:
            raise AuthGuardError(
                f"Sequence of {length} tokens exceeds max_seq {self.cfg.max_seq}", ErrorCode.SEQUENCE_OVERFLOW
            )
        positions = torch.arange(length, device=embeds.device)
        x = embeds + self.pos_embed(positions).unsqueeze(0)
        causal_mask = torch.triu(torch.ones(length, length, dtype=torch.bool, device=embeds.device), diagonal=1)
        for block in self.blocks:
            x = block(x, causal_mask)
        return self.lm_head(self.norm(x))

    def apply_lora(self, rank: int) -> list[nn.Parameter]:
        """Wrap the MLP and output projections with rank-``rank`` adapters.

        Returns:
            list[nn.Parameter]: The new adapter parameters.

        """
        adapters: list[nn.Parameter] = []
        for block in self.blocks:
            for position in (0, 2):
                wrapped = LoRALinear(block.mlp[position], rank)
                block.mlp[position] = wrapped
                adapters += [wrapped.lora_a, wrapped.lora_b]
        self.lm_head = LoRALinear(self.lm_head, rank)  # type: ignore[assignment]
        adapters += [self.lm_head.lora_a, self.lm_head.lora_b]
        return adapters


@dataclass
class AssembledSequence:
    """Input embeddings with token ids and the loss mask.

    ``token_ids`` holds ``<image>`` at visual positions. ``loss_mask`` is 1 on
    response and EOS positions only.
    """

    embeds: torch.Tensor
    token_ids: torch.Tensor
    loss_mask: torch.Tensor

    def __len__(self) -> int:
        return int(self.token_ids.shape[-1])


def assemble_sequence(
    lm: ToyLM,
    visual_tokens: torch.Tensor,
    question_ids: Sequence[int],
    response_ids: Sequence[int],
) -> AssembledSequence:
    """Lay out ``[BOS] visual question response [EOS]``.

    Raises:
        AuthGuardError: If the sequence would exceed ``max_seq``.

    """
    n_visual = visual_tokens.shape[0]
    length = 1 + n_visual + len(question_ids) + len(response_ids) + 1
    if length > lm.cfg.max_seq:
        raise AuthGuardError(
            f"Sequence of {length} tokens exceeds max_seq {lm.cfg.max_seq}; shorten the question or response",
            ErrorCode.SEQUENCE_OVERFLOW,
        )
    text_ids = torch.tensor([*question_ids, *response_ids, EOS_ID], dtype=torch.long)
    token_ids = torch.cat(
        [torch.tensor([BOS_ID]), torch.full((n_visual,), IMAGE_ID, dtype=torch.long), text_ids]
    )
    embeds = torch.cat(
        [
            lm.token_embed(torch.tensor([BOS_ID])),
            visual_tokens.to(lm.token_embed.weight.dtype),
            lm.token_embed(text_ids),
        ]
    )
    loss_mask = torch.zeros(length, dtype=embeds.dtype)
    loss_mask[length - len(response_ids) - 1 :] = 1
    return AssembledSequence(embeds=embeds, token_ids=token_ids, loss_mask=loss_mask)


def collate(sequences: Sequence[AssembledSequence]) -> AssembledSequence:
    """Right-pad sequences into a batch; padding is masked out of the loss."""
    length = max(len(seq) for seq in sequences)
    embeds = torch.zeros(len(sequences), length, sequences[0].embeds.shape[-1], dtype=sequences[0].embeds.dtype)
    token_ids = torch.full((len(sequences), length), PAD_ID, dtype=torch.long)
    loss_mask = torch.zeros(len(sequences), length, dtype=sequences[0].loss_mask.dtype)
    for row, seq in enumerate(sequences):
        embeds[row, : len(seq)] = seq.embeds
        token_ids[row, : len(seq)] = seq.token_ids
        loss_mask[row, : len(seq)] = seq.loss_mask
    return AssembledSequence(embeds=embeds, token_ids=token_ids, loss_mask=loss_mask)


def masked_nll(logits: torch.Tensor, token_ids: torch.Tensor, loss_mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token NLL over the positions selected by ``loss_mask``.

    Logits at position ``t`` predict the token at ``t + 1``.

    Raises:
        AuthGuardError: If the mask selects nothing.

    """
    target_mask = loss_mask[..., 1:]
    total = target_mask.sum()
    if total == 0:
        raise AuthGuardError("Loss mask selects no positions", ErrorCode.VALIDATION_ERROR)
    nll = F.cross_entropy(
        logits[..., :-1, :].reshape(-1, logits.shape[-1]), token_ids[..., 1:].reshape(-1), reduction="none"
    )
    return (nll * target_mask.reshape(-1)).sum() / total


def ar_loss(lm: ToyLM, assembled: AssembledSequence) -> torch.Tensor:
    """Teacher-forced autoregressive loss of an assembled (batched or single) sequence."""
    embeds, token_ids, loss_mask = assembled.embeds, assembled.token_ids, assembled.loss_mask
    if embeds.ndim == 2:
        embeds, token_ids, loss_mask = embeds.unsqueeze(0), token_ids.unsqueeze(0), loss_mask.unsqueeze(0)
    return masked_nll(lm(embeds), token_ids, loss_mask)


def verdict(response: str) -> Verdict:
    """``fake`` if the first sentence of ``response`` mentions fake, else ``real``."""
    match = _FIRST_SENTENCE.match(response.lower())
    first = match.group(0) if match else ""
    return "fake" if "fake" in re.findall(r"[a-z0-9]+", first) else "real"


@dataclass
class VisualFeatures:
    """Frozen encoder outputs feeding the projector."""

    class_embedding: torch.Tensor
    patch_tokens: torch.Tensor
    classifier_score: float


@torch.no_grad()
def encode_visual(
    stage1: Stage1Model,
    samples: Sequence[LabeledImage],
    token_source: str = "adapter",
    batch_size: int = 64,
) -> dict[str, VisualFeatures]:
    """Class embedding, penultimate patch tokens and classifier score per image."""
    stage1.encoder.eval()
    features: dict[str, VisualFeatures] = {}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        gated = stage1.encoder(make_batch(chunk).images)
        class_embedding = gated.e if token_source == "adapter" else gated.h
        for row, sample in enumerate(chunk):
            features[sample.id] = VisualFeatures(
                class_embedding=class_embedding[row].clone(),
                patch_tokens=gated.penultimate_patch_tokens[row].clone(),
                classifier_score=float(gated.probability[row]),
            )
    return features


class Reasoner:
    """Frozen stage-1 encoder, projector, language model and tokenizer."""

    def __init__(self, config: RunConfig, stage1: Stage1Model, tokenizer: WordTokenizer, lora_rank: int = 0):
        self.config = config
        self.stage1 = stage1
        self.tokenizer = tokenizer
        lm_cfg = config.lm.model_copy(update={"vocab_size": len(tokenizer)})
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(config.train.seed, SEED_REASONER_INIT))
            self.projector = Projector(config.projector)
            self.lm = ToyLM(lm_cfg)
        if lora_rank > 0:
            self.lm.apply_lora(lora_rank)
        self.stage1.requires_grad_(False)

    def components(self) -> dict[str, nn.Module]:
        return {"projector": self.projector, "lm": self.lm}

    def visual_tokens(self, features: Sequence[VisualFeatures]) -> torch.Tensor:
        patches = torch.stack([f.patch_tokens for f in features])
        class_embedding = torch.stack([f.class_embedding for f in features])
        return project_tokens(self.projector, patches, class_embedding)

    def assemble_batch(
        self, samples: Sequence[InstructionSample], features: Mapping[str, VisualFeatures]
    ) -> AssembledSequence:
        visual = self.visual_tokens([features[s.image_id] for s in samples])
        return collate(
            [
                assemble_sequence(
                    self.lm, visual[row], self.tokenizer.encode(s.question), self.tokenizer.encode(s.response)
                )
                for row, s in enumerate(samples)
            ]
        )

    @torch.no_grad()
    def generate(self, features: VisualFeatures, question: str, max_new: int) -> str:
        """Greedy decoding until EOS, ``max_new`` tokens or ``max_seq``."""
        self.projector.eval()
        self.lm.eval()
        visual = self.visual_tokens([features])[0]
        prefix = assemble_sequence(self.lm, visual, self.tokenizer.encode(question), [])
        # drop the trailing EOS appended by assemble_sequence
        embeds = prefix.embeds[:-1].unsqueeze(0)
        generated: list[int] = []
        for _ in range(max_new):
            if embeds.shape[1] >= self.lm.cfg.max_seq:
                break
            next_id = int(self.lm(embeds)[0, -1].argmax())
            if next_id == EOS_ID:
                break
            generated.append(next_id)
            next_embed = self.lm.token_embed(torch.tensor([[next_id]]))
            embeds = torch.cat([embeds, next_embed], dim=1)
        return self.tokenizer.decode(generated)


@dataclass
class GenerationResult:
    """JSON record emitted by ``authguard generate``."""

    image_id: str
    question: str
    response: str
    verdict: Verdict
    classifier_score: float

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "question": self.question,
            "response": self.response,
            "verdict": self.verdict,
            "classifier_score": self.classifier_score,
        }


def generate(
    reasoner: Reasoner, image: LabeledImage, question: str = DETECTION_QUESTION, max_new: int | None = None
) -> GenerationResult:
    """Answer ``question`` about ``image`` and extract the text verdict."""
    features = encode_visual(reasoner.stage1, [image], reasoner.config.projector.token_source)[image.id]
    response = reasoner.generate(features, question, max_new or reasoner.config.stage2.max_new_tokens)
    return GenerationResult(
        image_id=image.id,
        question=question,
        response=response,
        verdict=verdict(response),
        classifier_score=features.classifier_score,
    )


@dataclass
class Stage2Result:
    """Artifacts and loss trace of a stage-2 run."""

    checkpoint: Path
    initial_loss: float
    final_loss: float
    checksums: dict[str, dict[str, str]] = field(default_factory=dict)


@torch.no_grad()
def mean_ar_loss(
    reasoner: Reasoner,
    samples: Sequence[InstructionSample],
    features: Mapping[str, VisualFeatures],
    batch_size: int,
) -> float:
    """Sample-weighted mean of the batch losses over ``samples``."""
    reasoner.projector.eval()
    reasoner.lm.eval()
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        total += float(ar_loss(reasoner.lm, reasoner.assemble_batch(chunk, features))) * len(chunk)
    return total / len(samples)


def _run_substep(
    name: str,
    reasoner: Reasoner,
    samples: Sequence[InstructionSample],
    features: Mapping[str, VisualFeatures],
    parameters: list[nn.Parameter],
    lr: float,
    epochs: int,
    metrics_path: Path,
) -> None:
    config = reasoner.config
    batch_size = config.stage2.batch_size
    if epochs == 0 or not parameters:
        return
    optimizer = torch.optim.Adam(parameters, lr=lr)
    shuffle_seed = derive_seed(config.train.seed, f"{SEED_SHUFFLE}:{name}")
    step = 0
    for epoch in range(1, epochs + 1):
        reasoner.projector.train()
        reasoner.lm.train()
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(samples))
        for start in range(0, len(order), batch_size):
            chunk = [samples[i] for i in order[start : start + batch_size]]
            loss = ar_loss(reasoner.lm, reasoner.assemble_batch(chunk, features))
            if not torch.isfinite(loss):
                raise AuthGuardError(f"{name}: non-finite loss at step {step + 1}", ErrorCode.NUMERICAL_ERROR)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.train.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(parameters, config.train.grad_clip)
            optimizer.step()
            step += 1
            append_jsonl(metrics_path, {"substep": name, "epoch": epoch, "step": step, "loss": float(loss)})
        logger.info(f"{name}: epoch {epoch}/{epochs} done ({step} steps)")


def train_stage2(
    instructions: Sequence[InstructionSample],
    corpus: SynthCorpus,
    encoder_checkpoint: str | Path | None,
    config: RunConfig,
    out_dir: str | Path,
) -> Stage2Result:
    """Instruction-tune the projector and language model on the train split.

    Args:
        instructions: Instruction samples; only those of train-split images are used.
        corpus: Corpus providing the images.
        encoder_checkpoint: Stage-1 checkpoint; the encoder stays frozen. ``None`` starts from a
            freshly initialised encoder saved as ``untrained.pt`` in ``out_dir``.
        config: Run configuration.
        out_dir: Directory for ``reasoner.pt`` and ``stage2_metrics.jsonl``.

    Returns:
        Stage2Result: Checkpoint path, initial/final train loss and checksums.

    Raises:
        AuthGuardError: If the checkpoint does not match the config or a freeze contract is broken.

    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if encoder_checkpoint is None:
        encoder_checkpoint = save_untrained_stage1(config, out_dir / UNTRAINED_CHECKPOINT)
    stage1, checkpoint = load_stage1(encoder_checkpoint)
    if checkpoint.config.backbone != config.backbone:
        raise AuthGuardError(
            f"Encoder checkpoint backbone {checkpoint.config.backbone.model_dump()} does not match the run config "
            f"{config.backbone.model_dump()}",
            ErrorCode.CHECKPOINT_ERROR,
        )

    train_ids = {sample.id for sample in corpus.by_split(Split.TRAIN)}
    samples = [s for s in instructions if s.image_id in train_ids]
    if not samples:
        raise AuthGuardError("No instruction samples refer to train-split images", ErrorCode.EMPTY_INPUT)
    logger.info(f"Stage 2: {len(samples)} instruction samples over {len({s.image_id for s in samples})} images")

    tokenizer = WordTokenizer.build((text for s in samples for text in (s.question, s.response)), config.lm.vocab_size)
    images = [corpus.get(image_id) for image_id in sorted({s.image_id for s in samples})]
    features = encode_visual(stage1, images, config.projector.token_source)
    reasoner = Reasoner(config, stage1, tokenizer)
    encoder_checksum = parameter_checksum(stage1.encoder)
    metrics_path = out_dir / STAGE2_METRICS_FILE
    metrics_path.write_text("", encoding="utf-8")
    batch_size = config.stage2.batch_size
    initial_loss = mean_ar_loss(reasoner, samples, features, batch_size)

    lm_before = parameter_checksum(reasoner.lm)
    projector_before = parameter_checksum(reasoner.projector)
    reasoner.lm.requires_grad_(False)
    _run_substep(
        "projector",
        reasoner,
        samples,
        features,
        list(reasoner.projector.parameters()),
        config.stage2.projector_lr,
        config.stage2.projector_epochs,
        metrics_path,
    )
    after_projector = {"lm": parameter_checksum(reasoner.lm), "projector": parameter_checksum(reasoner.projector)}
    if after_projector["lm"] != lm_before:
        raise AuthGuardError("Language model changed during the projector-only sub-step", ErrorCode.NUMERICAL_ERROR)

    if config.stage2.lora_rank > 0:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(config.train.seed, f"{SEED_REASONER_INIT}:lora"))
            lm_parameters = reasoner.lm.apply_lora(config.stage2.lora_rank)
    else:
        reasoner.lm.requires_grad_(True)
        lm_parameters = list(reasoner.lm.parameters())
    _run_substep(
        "finetune",
        reasoner,
        samples,
        features,
        [*reasoner.projector.parameters(), *lm_parameters],
        config.stage2.finetune_lr,
        config.stage2.finetune_epochs,
        metrics_path,
    )
    final_loss = mean_ar_loss(reasoner, samples, features, batch_size)
    if parameter_checksum(stage1.encoder) != encoder_checksum:
        raise AuthGuardError("Vision encoder changed during stage 2", ErrorCode.NUMERICAL_ERROR)

    path = save_checkpoint(
        out_dir / REASONER_CHECKPOINT,
        "reasoner",
        config,
        reasoner.components(),
        vocab=tokenizer.vocab,
        encoder_checkpoint=str(Path(encoder_checkpoint).resolve()),
        encoder_checksum=encoder_checksum,
        initial_loss=initial_loss,
        final_loss=final_loss,
    )
    logger.info(f"Stage 2 done: ar_loss {initial_loss:.4f} -> {final_loss:.4f}")
    return Stage2Result(
        checkpoint=path,
        initial_loss=initial_loss,
        final_loss=final_loss,
        checksums={
            "initial": {"projector": projector_before, "lm": lm_before},
            "after_projector": after_projector,
            "final": {"projector": parameter_checksum(reasoner.projector), "lm": parameter_checksum(reasoner.lm)},
        },
    )


def load_reasoner(path: str | Path, encoder_checkpoint: str | Path | None = None) -> Reasoner:
    """Rebuild a reasoner from its checkpoint and the stage-1 checkpoint it references.

    Raises:
        AuthGuardError: If the encoder checkpoint differs from the one used in training.

    """
    checkpoint = load_checkpoint(path, kind="reasoner")
    encoder_path = encoder_checkpoint or checkpoint.manifest["encoder_checkpoint"]
    stage1, _ = load_stage1(encoder_path)
    if parameter_checksum(stage1.encoder) != checkpoint.manifest["encoder_checksum"]:
        raise AuthGuardError(
            f"Encoder checkpoint {encoder_path} is not the one this reasoner was trained on", ErrorCode.CHECKPOINT_ERROR
        )
    reasoner = Reasoner(
        checkpoint.config, stage1, WordTokenizer(checkpoint.manifest["vocab"]), checkpoint.config.stage2.lora_rank
    )
    for name, module in reasoner.components().items():
        checkpoint.restore(name, module)
    reasoner.projector.eval()
    reasoner.lm.eval()
    return reasoner


def predict_with_reasoner(
    reasoner: Reasoner,
    samples: Sequence[LabeledImage],
    references: Mapping[str, Sequence[str]] | None = None,
    question: str = DETECTION_QUESTION,
) -> list[Prediction]:
    """Classifier scores plus generated answers, verdicts and caption references."""
    features = encode_visual(reasoner.stage1, samples, reasoner.config.projector.token_source)
    predictions = []
    for sample in samples:
        feature = features[sample.id]
        response = reasoner.generate(feature, question, reasoner.config.stage2.max_new_tokens)
        predictions.append(
            Prediction(
                image_id=sample.id,
                score=feature.classifier_score,
                label=int(sample.label),
                artifact_kind=sample.artifact_kind.value,
                hypothesis=response,
                references=list((references or {}).get(sample.id, [])) or None,
                verdict=verdict(response),
            )
        )
    return predictions


def detection_references(
    instructions: Iterable[InstructionSample], question: str = DETECTION_QUESTION
) -> dict[str, list[str]]:
    """Reference answers to ``question`` per image."""
    references: dict[str, list[str]] = {}
    for sample in instructions:
        if sample.question == question:
            references.setdefault(sample.image_id, []).append(sample.response)
    return references
