"""AuthGuard: expert deepfake vision encoder and reasoning head at desk scale."""

# Import local modules
from authguard.__version__ import __version__
from authguard.config import RunConfig
from authguard.datagen import CaptionRecord
from authguard.datagen import InstructionSample
from authguard.datagen import build_caption_prompt
from authguard.datagen import build_instruction_samples
from authguard.datagen import generate_captions
from authguard.datagen import split_caption
from authguard.encoder import ExpertEncoder
from authguard.encoder import GatedFeatures
from authguard.encoder import TextEncoder
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.metrics import EvalReport
from authguard.metrics import evaluate_predictions
from authguard.objectives import bce_loss
from authguard.objectives import contrastive_loss
from authguard.objectives import kl_regularizer
from authguard.objectives import total_loss
from authguard.reasoning import generate
from authguard.reasoning import train_stage2
from authguard.synthface import LabeledImage
from authguard.synthface import SynthCorpus
from authguard.synthface import make_corpus
from authguard.synthface import make_sample
from authguard.train import lr_at
from authguard.train import run_ablation_sweep
from authguard.train import train_stage1

__all__ = [
    "AuthGuardError",
    "CaptionRecord",
    "ErrorCode",
    "EvalReport",
    "ExpertEncoder",
    "GatedFeatures",
    "InstructionSample",
    "LabeledImage",
    "RunConfig",
    "SynthCorpus",
    "TextEncoder",
    "__version__",
    "bce_loss",
    "build_caption_prompt",
    "build_instruction_samples",
    "contrastive_loss",
    "evaluate_predictions",
    "generate",
    "generate_captions",
    "kl_regularizer",
    "lr_at",
    "make_corpus",
    "make_sample",
    "run_ablation_sweep",
    "split_caption",
    "total_loss",
    "train_stage1",
    "train_stage2",
]
