"""Fixtures for the synthetic acceptance runs.

These train at the default model size on a 2,000-image corpus and take
minutes, so every test here carries the ``e2e`` marker.
"""

# Import third-party modules
import pytest

# Import local modules
from authguard.client_config import MllmClientConfig
from authguard.config import RunConfig
from authguard.datagen import build_instruction_samples
from authguard.datagen import captions_by_image
from authguard.datagen import generate_captions_sync
from authguard.reasoning import train_stage2
from authguard.synthface import make_corpus
from authguard.train import train_stage1

ACCEPTANCE_SEED = 0
ACCEPTANCE_N = 2000


@pytest.fixture(scope="session")
def acceptance_corpus():
    """Default-size corpus split 80/10/10."""
    return make_corpus(ACCEPTANCE_SEED, ACCEPTANCE_N)


@pytest.fixture(scope="session")
def acceptance_records(acceptance_corpus):
    return generate_captions_sync(acceptance_corpus, MllmClientConfig(stub=True))


@pytest.fixture(scope="session")
def acceptance_captions(acceptance_records):
    return captions_by_image(acceptance_records)


@pytest.fixture(scope="session")
def acceptance_instructions(acceptance_records):
    return build_instruction_samples(acceptance_records)


@pytest.fixture(scope="session")
def acceptance_config() -> RunConfig:
    """Default run configuration: full preset, five epochs."""
    return RunConfig()


@pytest.fixture(scope="session")
def encoder_run(acceptance_corpus, acceptance_captions, acceptance_config, tmp_path_factory):
    return train_stage1(acceptance_corpus, acceptance_captions, acceptance_config, tmp_path_factory.mktemp("encoder"))


@pytest.fixture(scope="session")
def reasoner_run(acceptance_corpus, acceptance_instructions, acceptance_config, encoder_run, tmp_path_factory):
    return train_stage2(
        acceptance_instructions,
        acceptance_corpus,
        encoder_run.final_checkpoint,
        acceptance_config,
        tmp_path_factory.mktemp("reasoner"),
    )
