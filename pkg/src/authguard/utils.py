"""Utility functions for AuthGuard."""

# Import built-in modules
from collections.abc import Iterable
from collections.abc import Iterator
import hashlib
import json
from pathlib import Path
import re
from typing import Any

# Import third-party modules
import ftfy
from loguru import logger
import torch
from torch import nn

# Import local modules
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode

_WORD_PATTERN = re.compile(r"[a-z0-9]+")


def normalize_text(text: str) -> str:
    """Repair mojibake and collapse whitespace in model-generated text.

    Args:
        text: Raw text as returned by an MLLM endpoint.

    Returns:
        str: Text with fixed Unicode and single spaces.

    """
    return " ".join(ftfy.fix_text(text).split())


def word_tokens(text: str) -> list[str]:
    """Lowercase text and split it on whitespace and punctuation.

    Args:
        text: Input sentence.

    Returns:
        list[str]: Alphanumeric word tokens.

    """
    return _WORD_PATTERN.findall(text.lower())


def stable_hash(text: str) -> int:
    """Process-independent 64-bit hash of a string.

    Args:
        text: String to hash.

    Returns:
        int: Unsigned integer derived from SHA-256.

    """
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def sha256_text(text: str) -> str:
    """Hex SHA-256 digest of a string."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_hash(payload: Any) -> str:
    """Hash a JSON-serializable payload in canonical (sorted-key) form.

    Args:
        payload: Configuration dump.

    Returns:
        str: Hex SHA-256 digest.

    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return sha256_text(canonical)


def parameter_checksum(module: nn.Module) -> str:
    """Checksum all parameters and buffers of a module.

    The digest covers names, shapes, dtypes and raw bytes, so any update to a
    single weight changes it.

    Args:
        module: Module to fingerprint.

    Returns:
        str: Hex SHA-256 digest.

    """
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        data = tensor.detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tuple(data.shape)).encode("utf-8"))
        digest.update(str(data.dtype).encode("utf-8"))
        digest.update(data.numpy().tobytes())
    return digest.hexdigest()


def grad_norm(parameters: Iterable[torch.Tensor]) -> float:
    """L2 norm of the gradients currently stored on ``parameters``."""
    total = 0.0
    for param in parameters:
        if param.grad is not None:
            total += float(param.grad.detach().pow(2).sum())
    return total**0.5


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    """Write dictionaries as JSON lines.

    Args:
        path: Destination file; parent directories are created.
        rows: Objects to serialize.

    Returns:
        int: Number of lines written.

    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    logger.debug(f"Wrote {count} line(s) to {path}")
    return count


def append_jsonl(path: str | Path, row: dict[str, Any]) -> None:
    """Append a single JSON line to ``path``."""
    with Path(path).open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Iterate over the JSON objects of a JSONL file.

    Args:
        path: Source file.

    Yields:
        dict: One decoded object per non-blank line.

    Raises:
        AuthGuardError: If the file is missing or a line is not valid JSON.

    """
    path = Path(path)
    if not path.is_file():
        raise AuthGuardError(f"File not found: {path}", ErrorCode.FILE_ERROR)
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise AuthGuardError(f"Invalid JSON on line {line_no} of {path}: {e}", ErrorCode.FILE_ERROR) from e
