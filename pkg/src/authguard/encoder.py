"""Expert vision encoder.

Data flow for a batch of images::

    images ─ VisionBackbone ─ h ─┬─ ProbabilisticHead ─ (mu, sigma) ─ reparameterize ─ z
                                 └─ StatisticalBranch ─ v ─ GatingRouter ─ w
                                 e = w1*v + w2*z ─ ClassifierHead ─ logit

``z`` is aligned with caption embeddings from the frozen :class:`TextEncoder`,
``e`` is trained with binary cross-entropy. All heads read the class position.
"""

# Import built-in modules
from collections.abc import Sequence
from dataclasses import dataclass

# Import third-party modules
from loguru import logger
import torch
from torch import nn
import torch.nn.functional as F

# Import local modules
from authguard.config import VisionBackboneConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.utils import stable_hash
from authguard.utils import word_tokens

SIGMA_FLOOR = 1e-6
SIGMA_INIT_BIAS = -3.0
MAX_TEXT_TOKENS = 64
WEIGHT_SUM_TOLERANCE = 1e-6


class AttentionBlock(nn.Module):
    """Pre-norm transformer block: ``x + attn(ln(x))`` then ``x + mlp(ln(x))``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(
        self,
        x: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        key_padding_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        y = self.norm1(x)
        attended, _ = self.attn(
            y, y, y, attn_mask=attn_mask, key_padding_mask=key_padding_mask, need_weights=False
        )
        x = x + attended
        return x + self.mlp(self.norm2(x))

    @torch.no_grad()
    def identity_init_(self) -> None:
        """Zero both residual branches so the block maps its input to itself."""
        self.attn.out_proj.weight.zero_()
        self.attn.out_proj.bias.zero_()
        self.mlp[-1].weight.zero_()
        self.mlp[-1].bias.zero_()


class AttentionStack(nn.Module):
    """A short stack of self-attention blocks read out at the class position."""

    def __init__(self, dim: int, heads: int, depth: int = 2, mlp_ratio: float = 4.0):
        super().__init__()
        self.blocks = nn.ModuleList(AttentionBlock(dim, heads, mlp_ratio) for _ in range(depth))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        return tokens[:, 0]

    def identity_init_(self) -> None:
        for block in self.blocks:
            block.identity_init_()


@dataclass
class RawEmbedding:
    """Backbone output ``h``.

    Attributes:
        tokens: Final-layer tokens, shape (B, 1 + N_p, d_v); class token first.
        penultimate_patch_tokens: Patch tokens of the second-to-last block, (B, N_p, d_v).

    """

    tokens: torch.Tensor
    penultimate_patch_tokens: torch.Tensor | None = None

    @property
    def class_token(self) -> torch.Tensor:
        return self.tokens[:, 0]

    @property
    def patch_tokens(self) -> torch.Tensor:
        return self.tokens[:, 1:]


@dataclass
class EmbeddingDistribution:
    """Diagonal Gaussian image embedding."""

    mu: torch.Tensor
    sigma: torch.Tensor


@dataclass
class GatedFeatures:
    """Per-image outputs of :class:`ExpertEncoder` (batched along dim 0)."""

    h: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor
    z: torch.Tensor
    v: torch.Tensor
    w: torch.Tensor
    e: torch.Tensor
    logit: torch.Tensor
    penultimate_patch_tokens: torch.Tensor

    @property
    def probability(self) -> torch.Tensor:
        return torch.sigmoid(self.logit)

    @property
    def uncertainty(self) -> torch.Tensor:
        """Harmonic mean of the predicted variances, one value per image."""
        variance = self.sigma.pow(2)
        return variance.shape[-1] / variance.reciprocal().sum(dim=-1)


class VisionBackbone(nn.Module):
    """Toy ViT: patchify, linear embed, class token, positions, pre-norm blocks."""

    def __init__(self, cfg: VisionBackboneConfig):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embed_dim
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, dim))
        self.blocks = nn.ModuleList(AttentionBlock(dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(dim)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, images: torch.Tensor) -> RawEmbedding:
        expected = (3, self.cfg.image_side, self.cfg.image_side)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise AuthGuardError(
                f"Expected images of shape (B, {', '.join(map(str, expected))}), got {tuple(images.shape)}",
                ErrorCode.SHAPE_ERROR,
            )
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        x = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), x], dim=1) + self.pos_embed
        penultimate = x[:, 1:]
        for index, block in enumerate(self.blocks):
            x = block(x)
            if index == len(self.blocks) - 2:
                penultimate = x[:, 1:]
        return RawEmbedding(tokens=self.norm(x), penultimate_patch_tokens=penultimate)


class ProbabilisticHead(nn.Module):
    """Two independent attention stacks predicting ``mu`` and ``sigma``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.mu_stack = AttentionStack(dim, heads, 2, mlp_ratio)
        self.mu_out = nn.Linear(dim, dim)
        self.sigma_stack = AttentionStack(dim, heads, 2, mlp_ratio)
        self.sigma_out = nn.Linear(dim, dim)
        nn.init.constant_(self.sigma_out.bias, SIGMA_INIT_BIAS)

    def raw_sigma(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.sigma_out(self.sigma_stack(tokens))

    def forward(self, tokens: torch.Tensor) -> EmbeddingDistribution:
        mu = self.mu_out(self.mu_stack(tokens))
        sigma = F.softplus(self.raw_sigma(tokens)) + SIGMA_FLOOR
        return EmbeddingDistribution(mu=mu, sigma=sigma)


class StatisticalBranch(nn.Module):
    """Two self-attention layers producing the statistical feature ``v``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.stack = AttentionStack(dim, heads, 2, mlp_ratio)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.stack(tokens)

    def identity_init_(self) -> None:
        self.stack.identity_init_()


class GatingRouter(nn.Module):
    """Maps ``v`` to two softmax gate weights ``(w1, w2)``."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, 2)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.proj(v), dim=-1)


class ClassifierHead(nn.Module):
    """Linear real/fake logit on the aggregate ``e``."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc = nn.Linear(dim, 1)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.fc(e).squeeze(-1)


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Sample ``z = mu + sigma * eps`` with caller-provided noise.

    Raises:
        AuthGuardError: If the shapes differ.

    """
    if eps.shape != mu.shape or sigma.shape != mu.shape:
        raise AuthGuardError(
            f"Shape mismatch: mu {tuple(mu.shape)}, sigma {tuple(sigma.shape)}, eps {tuple(eps.shape)}",
            ErrorCode.SHAPE_ERROR,
        )
    return mu + sigma * eps


def aggregate(v: torch.Tensor, z: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Convex combination ``e = w1 * v + w2 * z``.

    Raises:
        AuthGuardError: If the gate weights do not sum to one within 1e-6.

    """
    if w.shape[-1] != 2:
        raise AuthGuardError(f"Gate weights must have 2 components, got {w.shape[-1]}", ErrorCode.SHAPE_ERROR)
    if (w.sum(dim=-1) - 1).abs().max() > WEIGHT_SUM_TOLERANCE:
        raise AuthGuardError("Gate weights must sum to 1", ErrorCode.VALIDATION_ERROR)
    return w[..., 0:1] * v + w[..., 1:2] * z


class ExpertEncoder(nn.Module):
    """Backbone plus probabilistic, statistical, gating and classification heads.

    Args:
        cfg: Backbone shape.
        use_uncertainty: Sample ``z`` from ``N(mu, sigma^2)`` while training; otherwise ``z = mu``.
        use_adapter: Gate ``v`` and ``z``; otherwise ``e = v``.

    """

    def __init__(self, cfg: VisionBackboneConfig, use_uncertainty: bool = True, use_adapter: bool = True):
        super().__init__()
        self.cfg = cfg
        self.use_uncertainty = use_uncertainty
        self.use_adapter = use_adapter
        dim = cfg.embed_dim
        self.backbone = VisionBackbone(cfg)
        self.prob_head = ProbabilisticHead(dim, cfg.heads, cfg.mlp_ratio)
        self.statistical = StatisticalBranch(dim, cfg.heads, cfg.mlp_ratio)
        self.router = GatingRouter(dim)
        self.classifier = ClassifierHead(dim)

    def forward(self, images: torch.Tensor, eps: torch.Tensor | None = None) -> GatedFeatures:
        raw = self.backbone(images)
        dist = self.prob_head(raw.tokens)
        if self.use_uncertainty and self.training:
            noise = eps if eps is not None else torch.randn_like(dist.mu)
            z = reparameterize(dist.mu, dist.sigma, noise)
        else:
            z = dist.mu
        v = self.statistical(raw.tokens)
        if self.use_adapter:
            w = self.router(v)
        else:
            w = torch.tensor([1.0, 0.0], dtype=v.dtype, device=v.device).expand(v.shape[0], 2)
        e = aggregate(v, z, w)
        assert raw.penultimate_patch_tokens is not None
        return GatedFeatures(
            h=raw.class_token,
            mu=dist.mu,
            sigma=dist.sigma,
            z=z,
            v=v,
            w=w,
            e=e,
            logit=self.classifier(e),
            penultimate_patch_tokens=raw.penultimate_patch_tokens,
        )

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        """Parameters per component, used for gradient-norm reporting."""
        return {
            "backbone": list(self.backbone.parameters()),
            "prob_head": list(self.prob_head.parameters()),
            "statistical": list(self.statistical.parameters()),
            "router": list(self.router.parameters()),
            "classifier": list(self.classifier.parameters()),
        }


class TextEncoder(nn.Module):
    """Frozen toy sentence encoder ``G``.

    Lowercase words are hashed into ``buckets`` embedding rows, passed through a
    small transformer and mean-pooled. Parameters come from ``seed`` and never
    receive gradients.
    """

    def __init__(self, dim: int, buckets: int = 8192, layers: int = 2, heads: int = 4, seed: int = 0):
        super().__init__()
        self.buckets = buckets
        self.seed = seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.token_embed = nn.Embedding(buckets, dim)
            self.pos_embed = nn.Embedding(MAX_TEXT_TOKENS, dim)
            self.blocks = nn.ModuleList(AttentionBlock(dim, heads) for _ in range(layers))
            self.norm = nn.LayerNorm(dim)
        self.requires_grad_(False)
        super().train(False)

    def train(self, mode: bool = True) -> "TextEncoder":
        # frozen: always stays in eval mode
        return super().train(False)

    def tokenize(self, sentence: str) -> list[int]:
        """Hash-bucket ids of the words of ``sentence``.

        Raises:
            AuthGuardError: If the sentence contains no words.

        """
        words = word_tokens(sentence)
        if not words:
            raise AuthGuardError("Cannot encode an empty sentence", ErrorCode.EMPTY_INPUT)
        if len(words) > MAX_TEXT_TOKENS:
            logger.debug(f"Truncating a {len(words)}-word sentence to {MAX_TEXT_TOKENS} tokens: {sentence[:60]!r}")
            words = words[:MAX_TEXT_TOKENS]
        return [stable_hash(word) % self.buckets for word in words]

    @torch.no_grad()
    def forward(self, sentences: Sequence[str]) -> torch.Tensor:
        if isinstance(sentences, str):
            sentences = [sentences]
        if not sentences:
            raise AuthGuardError("No sentences to encode", ErrorCode.EMPTY_INPUT)
        token_ids = [self.tokenize(sentence) for sentence in sentences]
        length = max(len(ids) for ids in token_ids)
        ids = torch.zeros(len(token_ids), length, dtype=torch.long)
        valid = torch.zeros(len(token_ids), length, dtype=torch.bool)
        for row, row_ids in enumerate(token_ids):
            ids[row, : len(row_ids)] = torch.tensor(row_ids, dtype=torch.long)
            valid[row, : len(row_ids)] = True
        x = self.token_embed(ids) + self.pos_embed(torch.arange(length)).unsqueeze(0)
        for block in self.blocks:
            x = block(x, key_padding_mask=~valid)
        x = self.norm(x)
        weights = valid.unsqueeze(-1).to(x.dtype)
        return (x * weights).sum(dim=1) / weights.sum(dim=1)

    def encode_text(self, sentence: str) -> torch.Tensor:
        """Embedding ``t`` of a single sentence, shape (d_v,)."""
        return self(sentence)[0]
