"""Test cases for utils module."""

# Import built-in modules
import json

# Import third-party modules
import pytest
import torch
from torch import nn

# Import local modules
from authguard.app import derive_seed
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.utils import append_jsonl
from authguard.utils import config_hash
from authguard.utils import grad_norm
from authguard.utils import normalize_text
from authguard.utils import parameter_checksum
from authguard.utils import read_jsonl
from authguard.utils import sha256_text
from authguard.utils import stable_hash
from authguard.utils import word_tokens
from authguard.utils import write_jsonl


def test_normalize_text_repairs_mojibake():
    """Test Unicode repair and whitespace collapsing."""
    assert normalize_text("  CafÃ©\n\tlighting  ") == "Café lighting"


def test_normalize_text_plain():
    """Test that clean text is unchanged."""
    assert normalize_text("The eyes are misaligned.") == "The eyes are misaligned."


def test_word_tokens():
    """Test lowercase alphanumeric tokenization."""
    assert word_tokens("The EYES, look odd! 2x") == ["the", "eyes", "look", "odd", "2x"]
    assert word_tokens("...") == []


def test_stable_hash_is_process_independent():
    """Test a fixed digest-derived value."""
    assert stable_hash("eyes") == int(sha256_text("eyes")[:16], 16)


def test_config_hash_ignores_key_order():
    """Test canonical hashing of nested payloads."""
    assert config_hash({"a": 1, "b": {"c": 2, "d": 3}}) == config_hash({"b": {"d": 3, "c": 2}, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_derive_seed():
    """Test named sub-seeds are stable, distinct and non-negative."""
    assert derive_seed(0, "shuffle") == derive_seed(0, "shuffle")
    assert derive_seed(0, "shuffle") != derive_seed(0, "noise")
    assert derive_seed(0, "shuffle") != derive_seed(1, "shuffle")
    assert 0 <= derive_seed(2**64, "init") < 2**63


def test_parameter_checksum_detects_single_weight_change():
    """Test that touching one weight changes the digest."""
    torch.manual_seed(0)
    module = nn.Linear(4, 3)
    before = parameter_checksum(module)
    assert parameter_checksum(module) == before
    with torch.no_grad():
        module.weight[1, 2] += 1e-6
    assert parameter_checksum(module) != before


def test_grad_norm():
    """Test the L2 norm over stored gradients, skipping parameters without one."""
    a = nn.Parameter(torch.zeros(2))
    b = nn.Parameter(torch.zeros(1))
    a.grad = torch.tensor([3.0, 4.0])
    assert grad_norm([a, b]) == pytest.approx(5.0)


def test_jsonl_write_append_read(tmp_path):
    """Test writing, appending and reading JSON lines."""
    path = tmp_path / "nested" / "rows.jsonl"
    assert write_jsonl(path, [{"a": 1}, {"b": "é"}]) == 2
    append_jsonl(path, {"c": [1, 2]})
    assert list(read_jsonl(path)) == [{"a": 1}, {"b": "é"}, {"c": [1, 2]}]
    assert "é" in path.read_text(encoding="utf-8")


def test_read_jsonl_skips_blank_lines(tmp_path):
    """Test that blank lines are ignored."""
    path = tmp_path / "rows.jsonl"
    path.write_text(json.dumps({"a": 1}) + "\n\n   \n", encoding="utf-8")
    assert list(read_jsonl(path)) == [{"a": 1}]


def test_read_jsonl_errors(tmp_path):
    """Test missing files and malformed lines."""
    with pytest.raises(AuthGuardError) as exc_info:
        list(read_jsonl(tmp_path / "missing.jsonl"))
    assert exc_info.value.error_code == ErrorCode.FILE_ERROR
    path = tmp_path / "bad.jsonl"
    path.write_text('{"a": 1}\n{oops\n', encoding="utf-8")
    with pytest.raises(AuthGuardError) as exc_info:
        list(read_jsonl(path))
    assert "line 2" in str(exc_info.value)
