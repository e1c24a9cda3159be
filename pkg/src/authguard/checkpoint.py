"""Checkpoint archives.

A checkpoint is a single ``torch.save`` file holding::

    {"manifest": {...}, "state": {"<component>": state_dict, ...}}

The manifest carries the full run config, its hash, parameter shapes per
component and seed provenance. Loading uses ``weights_only=True`` and checks
every tensor shape against the module rebuilt from the embedded config.
"""

# Import built-in modules
from collections.abc import Mapping
from dataclasses import dataclass
from datetime import datetime
from datetime import timezone
from pathlib import Path
from typing import Any

# Import third-party modules
from loguru import logger
import torch
from torch import nn

# Import local modules
from authguard.__version__ import __version__
from authguard.config import RunConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.utils import parameter_checksum

CHECKPOINT_FORMAT = 1


@dataclass
class Checkpoint:
    """A loaded checkpoint archive."""

    path: Path
    kind: str
    config: RunConfig
    manifest: dict[str, Any]
    state: dict[str, dict[str, torch.Tensor]]

    def restore(self, component: str, module: nn.Module) -> nn.Module:
        """Load the stored state of ``component`` into ``module``.

        Raises:
            AuthGuardError: If the component is missing or any shape differs.

        """
        if component not in self.state:
            raise AuthGuardError(
                f"Checkpoint {self.path} has no component '{component}' (has: {', '.join(self.state)})",
                ErrorCode.CHECKPOINT_ERROR,
            )
        stored = self.state[component]
        expected = module.state_dict()
        missing = sorted(set(expected) - set(stored))
        unexpected = sorted(set(stored) - set(expected))
        if missing or unexpected:
            raise AuthGuardError(
                f"Component '{component}' does not match the config: missing {missing}, unexpected {unexpected}",
                ErrorCode.CHECKPOINT_ERROR,
            )
        for name, tensor in expected.items():
            if tuple(stored[name].shape) != tuple(tensor.shape):
                raise AuthGuardError(
                    f"Shape mismatch for {component}.{name}: checkpoint {tuple(stored[name].shape)}, "
                    f"config {tuple(tensor.shape)}",
                    ErrorCode.CHECKPOINT_ERROR,
                )
        module.load_state_dict(stored)
        return module


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: RunConfig,
    components: Mapping[str, nn.Module],
    **extra: Any,
) -> Path:
    """Write a checkpoint archive.

    Args:
        path: Destination file.
        kind: ``"encoder"`` or ``"reasoner"``.
        config: Run configuration, embedded verbatim.
        components: Named modules to store.
        **extra: Additional JSON-like manifest fields.

    Returns:
        Path: The written file.

    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": config.model_dump(mode="json"),
        "config_hash": config.hash(),
        "shapes": {
            name: {key: list(tensor.shape) for key, tensor in module.state_dict().items()}
            for name, module in components.items()
        },
        "checksums": {name: parameter_checksum(module) for name, module in components.items()},
        **extra,
    }
    state = {
        name: {key: tensor.detach().cpu() for key, tensor in module.state_dict().items()}
        for name, module in components.items()
    }
    torch.save({"manifest": manifest, "state": state}, path)
    logger.debug(f"Saved {kind} checkpoint to {path}")
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> Checkpoint:
    """Read a checkpoint archive and validate its manifest.

    Args:
        path: Checkpoint file.
        kind: Expected kind, if the caller requires one.

    Returns:
        Checkpoint: Manifest, config and raw state.

    Raises:
        AuthGuardError: If the file is missing, unreadable or inconsistent.

    """
    path = Path(path)
    if not path.is_file():
        raise AuthGuardError(f"Checkpoint not found: {path}", ErrorCode.FILE_ERROR)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise AuthGuardError(f"Cannot read checkpoint {path}: {e}", ErrorCode.CHECKPOINT_ERROR) from e
    if not isinstance(payload, dict) or "manifest" not in payload or "state" not in payload:
        raise AuthGuardError(f"{path} is not an AuthGuard checkpoint", ErrorCode.CHECKPOINT_ERROR)

    manifest = payload["manifest"]
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise AuthGuardError(f"Unsupported checkpoint format {manifest.get('format')!r}", ErrorCode.CHECKPOINT_ERROR)
    if kind is not None and manifest.get("kind") != kind:
        raise AuthGuardError(
            f"Expected a {kind} checkpoint, {path} is a {manifest.get('kind')} checkpoint", ErrorCode.CHECKPOINT_ERROR
        )
    try:
        config = RunConfig.model_validate(manifest["config"])
    except Exception as e:
        raise AuthGuardError(f"Invalid config embedded in {path}: {e}", ErrorCode.CHECKPOINT_ERROR) from e

    state = payload["state"]
    for component, shapes in manifest.get("shapes", {}).items():
        stored = state.get(component, {})
        for name, shape in shapes.items():
            if name not in stored or list(stored[name].shape) != list(shape):
                raise AuthGuardError(
                    f"Checkpoint {path} is corrupt: {component}.{name} does not match its manifest shape",
                    ErrorCode.CHECKPOINT_ERROR,
                )
    return Checkpoint(path=path, kind=manifest["kind"], config=config, manifest=manifest, state=state)
