"""Shared test fixtures for AuthGuard.

Everything here runs at toy scale: 16x16 images, 16-dimensional embeddings and
a one-layer language model, so unit tests finish in seconds on a CPU.
"""

# Import built-in modules
import os
from pathlib import Path
from unittest.mock import patch

# Import third-party modules
import pytest
import torch

# Import local modules
from authguard.client_config import MllmClientConfig
from authguard.config import RunConfig
from authguard.datagen import build_instruction_samples
from authguard.datagen import captions_by_image
from authguard.datagen import generate_captions_sync
from authguard.reasoning import train_stage2
from authguard.synthface import make_corpus
from authguard.train import train_stage1

TINY_SEED = 3
TINY_N = 40
TINY_SIDE = 16


def tiny_config_payload() -> dict:
    """Nested config dump of a run small enough for unit tests."""
    return {
        "backbone": {
            "image_side": TINY_SIDE,
            "patch_size": 8,
            "embed_dim": 16,
            "layers": 2,
            "heads": 2,
            "mlp_ratio": 2.0,
            "text_vocab_buckets": 64,
            "text_layers": 1,
        },
        "train": {"lr_base": 1e-3, "warmup_steps": 1, "epochs": 1, "batch_size": 4, "seed": 0},
        "projector": {"d_v": 16, "d_l": 32},
        "lm": {"vocab_size": 128, "layers": 1, "d_l": 32, "heads": 2, "max_seq": 128},
        "stage2": {"batch_size": 8, "projector_epochs": 1, "finetune_epochs": 1, "max_new_tokens": 16},
    }


@pytest.fixture(autouse=True)
def log_env(tmp_path_factory):
    """Keep log files out of the user's log directory and silence the console sink."""
    log_dir = tmp_path_factory.mktemp("logs")
    with patch.dict(os.environ, {"AUTHGUARD_LOG_DIR": str(log_dir), "AUTHGUARD_LOG_CONSOLE": "false"}):
        yield log_dir


@pytest.fixture(autouse=True)
def torch_threads():
    """Single-threaded torch keeps float reductions reproducible across runs."""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(previous)


@pytest.fixture
def tiny_payload() -> dict:
    """Fresh copy of the toy config dump, safe to mutate."""
    return tiny_config_payload()


@pytest.fixture
def tiny_config() -> RunConfig:
    """Validated toy run configuration."""
    return RunConfig.model_validate(tiny_config_payload())


@pytest.fixture(scope="session")
def tiny_corpus():
    """A 40-sample corpus of 16x16 faces (16+16 train, 2+2 val, 2+2 test)."""
    return make_corpus(TINY_SEED, TINY_N, image_side=TINY_SIDE)


@pytest.fixture(scope="session")
def tiny_records(tiny_corpus):
    """Stub caption records for the tiny corpus."""
    return generate_captions_sync(tiny_corpus, MllmClientConfig(stub=True))


@pytest.fixture(scope="session")
def tiny_captions(tiny_records):
    """Image id to caption sentences."""
    return captions_by_image(tiny_records)


@pytest.fixture(scope="session")
def tiny_instructions(tiny_records):
    """Instruction samples derived from the stub captions."""
    return build_instruction_samples(tiny_records)


@pytest.fixture
def corpus_dir(tiny_corpus, tmp_path) -> Path:
    """The tiny corpus saved to disk."""
    return tiny_corpus.save(tmp_path / "corpus")


@pytest.fixture(scope="session")
def stage1_run(tiny_corpus, tiny_captions, tmp_path_factory):
    """A one-epoch full-preset encoder trained on the tiny corpus."""
    config = RunConfig.model_validate(tiny_config_payload())
    return train_stage1(tiny_corpus, tiny_captions, config, tmp_path_factory.mktemp("stage1"))


@pytest.fixture(scope="session")
def stage2_run(tiny_corpus, tiny_instructions, stage1_run, tmp_path_factory):
    """A reasoner tuned on the stub instructions on top of ``stage1_run``."""
    config = RunConfig.model_validate(tiny_config_payload())
    return train_stage2(
        tiny_instructions, tiny_corpus, stage1_run.final_checkpoint, config, tmp_path_factory.mktemp("stage2")
    )
