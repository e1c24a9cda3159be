"""Application constants and seed fan-out for AuthGuard."""

# Import built-in modules
import hashlib

# Constants
APP_NAME = "authguard"
APP_DESCRIPTION = """AuthGuard: expert deepfake vision encoder and reasoning head at desk scale.

Stage 1 trains a vision encoder with a gated combination of binary classification
and uncertainty-aware image-text contrastive learning. Stage 2 projects the gated
class embedding plus patch tokens into a small language model and instruction-tunes
it to explain its verdicts.
"""

# Named sub-seeds fanned out from the single --seed of a run
SEED_CORPUS = "corpus"
SEED_INIT = "init"
SEED_SHUFFLE = "shuffle"
SEED_NOISE = "noise"
SEED_CAPTION = "caption"
SEED_TEXT_ENCODER = "text-encoder"

_SEED_MASK = (1 << 63) - 1


def derive_seed(root: int, name: str) -> int:
    """Derive a named 63-bit sub-seed from the root seed.

    Args:
        root: Root seed of the run.
        name: Sub-seed name, e.g. ``"shuffle"``.

    Returns:
        int: Non-negative seed usable by numpy and torch generators.

    """
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & _SEED_MASK
