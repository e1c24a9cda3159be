"""Differentiable objectives of stage 1.

The overall loss is ``beta * L_cls + alpha * L_cst + kl_weight * L_kl`` where
``L_cls`` is binary cross-entropy on the aggregate embedding, ``L_cst`` the
symmetric image-text contrastive loss on ``z`` and ``L_kl`` an optional pull of
the embedding distribution towards ``N(0, I)``.
"""

# Import built-in modules
from dataclasses import dataclass

# Import third-party modules
import torch
from torch import nn
import torch.nn.functional as F

# Import local modules
from authguard.config import LossConfig
from authguard.encoder import EmbeddingDistribution
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode

TEMPERATURE_MIN = 1.0
TEMPERATURE_MAX = 100.0


def contrastive_loss(
    image_features: torch.Tensor,
    text_features: torch.Tensor,
    temperature: torch.Tensor | float,
) -> torch.Tensor:
    """Symmetric InfoNCE loss over matched image/text rows.

    Rows are L2-normalised, scaled cosine similarities form a ``B x B`` logit
    matrix, and cross-entropy towards the diagonal is averaged over the
    image-to-text and text-to-image directions.

    Args:
        image_features: ``Z``, shape (B, d).
        text_features: ``T``, shape (B, d); row ``i`` describes image ``i``.
        temperature: Positive scalar multiplier ``w`` on the similarities.

    Returns:
        torch.Tensor: Scalar loss.

    Raises:
        AuthGuardError: On mismatched shapes, an empty batch or a zero-norm row.

    """
    if image_features.ndim != 2 or image_features.shape != text_features.shape:
        raise AuthGuardError(
            f"Expected matching (B, d) features, got {tuple(image_features.shape)} and {tuple(text_features.shape)}",
            ErrorCode.SHAPE_ERROR,
        )
    if image_features.shape[0] == 0:
        raise AuthGuardError("Contrastive loss needs at least one pair", ErrorCode.EMPTY_INPUT)
    image_norms = image_features.norm(dim=-1)
    text_norms = text_features.norm(dim=-1)
    if (image_norms == 0).any() or (text_norms == 0).any():
        raise AuthGuardError("Cannot normalise a zero-norm feature row", ErrorCode.VALIDATION_ERROR)

    image_unit = image_features / image_norms.unsqueeze(-1)
    text_unit = text_features / text_norms.unsqueeze(-1)
    logits = temperature * image_unit @ text_unit.T
    targets = torch.arange(logits.shape[0], device=logits.device)
    return 0.5 * (F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets))


def bce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy in the stable log-sum-exp form.

    Raises:
        AuthGuardError: If the batch is empty or a label is not 0 or 1.

    """
    if logits.numel() == 0:
        raise AuthGuardError("BCE needs at least one logit", ErrorCode.EMPTY_INPUT)
    labels = labels.to(logits.dtype)
    if not ((labels == 0) | (labels == 1)).all():
        raise AuthGuardError("Labels must be 0 or 1", ErrorCode.VALIDATION_ERROR)
    return F.binary_cross_entropy_with_logits(logits, labels)


def kl_regularizer(distribution: EmbeddingDistribution) -> torch.Tensor:
    """Mean per-dimension ``KL(N(mu, sigma^2) || N(0, 1))``."""
    mu, sigma = distribution.mu, distribution.sigma
    return (0.5 * (sigma.pow(2) + mu.pow(2) - 1) - torch.log(sigma)).mean()


def total_loss(
    cls_loss: torch.Tensor | float,
    cst_loss: torch.Tensor | float,
    kl_loss: torch.Tensor | float,
    cfg: LossConfig,
) -> torch.Tensor:
    """Weighted sum ``beta * cls + alpha * cst + kl_weight * kl``."""
    total = cfg.beta * cls_loss + cfg.alpha * cst_loss + cfg.kl_weight * kl_loss
    return torch.as_tensor(total)


class Temperature(nn.Module):
    """Learnable contrastive temperature kept inside [1, 100]."""

    def __init__(self, initial: float = 1 / 0.07):
        super().__init__()
        self.value = nn.Parameter(torch.tensor(float(initial)))

    def forward(self) -> torch.Tensor:
        return self.value

    @torch.no_grad()
    def clamp_(self) -> None:
        self.value.clamp_(TEMPERATURE_MIN, TEMPERATURE_MAX)


@dataclass
class LossTerms:
    """Individual stage-1 loss terms of one step."""

    total: torch.Tensor
    cls: torch.Tensor
    cst: torch.Tensor
    kl: torch.Tensor

    def check_finite(self) -> None:
        """Raise with every term in the message if any term is not finite."""
        for name, value in (("total", self.total), ("cls", self.cls), ("cst", self.cst), ("kl", self.kl)):
            if not torch.isfinite(value).all():
                raise AuthGuardError(f"Non-finite loss ({name}): {self.as_dict()}", ErrorCode.NUMERICAL_ERROR)

    def as_dict(self) -> dict[str, float]:
        return {
            "loss_total": float(self.total),
            "loss_cls": float(self.cls),
            "loss_cst": float(self.cst),
            "loss_kl": float(self.kl),
        }
