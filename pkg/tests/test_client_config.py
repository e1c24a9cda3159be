"""Test cases for client_config module."""

# Import built-in modules
import os
from unittest.mock import patch

# Import third-party modules
import pytest

# Import local modules
from authguard.client_config import DEFAULT_MODEL
from authguard.client_config import MllmClientConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode


@pytest.fixture
def clean_env():
    """Environment without any AuthGuard client variables."""
    env = {key: value for key, value in os.environ.items() if not key.startswith("AUTHGUARD_MLLM")}
    with patch.dict(os.environ, env, clear=True):
        yield


class TestMllmClientConfig:
    """Tests for MllmClientConfig validation."""

    def test_valid_config(self):
        """Test creating a valid configuration."""
        config = MllmClientConfig(endpoint="https://mllm.example.com/v1/chat")
        assert config.model == DEFAULT_MODEL
        assert config.retries == 3
        assert config.concurrency == 4

    def test_stub_needs_no_endpoint(self):
        """Test that the stub client skips endpoint validation."""
        assert MllmClientConfig(stub=True).endpoint == ""

    def test_missing_endpoint_raises(self):
        """Test that a real client needs an endpoint."""
        with pytest.raises(AuthGuardError) as exc_info:
            MllmClientConfig()
        assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR
        assert "--stub" in str(exc_info.value)

    def test_invalid_protocol_raises(self):
        """Test that a non-HTTP endpoint is rejected."""
        with pytest.raises(AuthGuardError) as exc_info:
            MllmClientConfig(endpoint="ftp://example.com")
        assert "must start with" in str(exc_info.value)

    @pytest.mark.parametrize("field", [{"retries": -1}, {"concurrency": 0}, {"timeout": 0}])
    def test_invalid_numbers_raise(self, field):
        """Test numeric bounds."""
        with pytest.raises(AuthGuardError):
            MllmClientConfig(stub=True, **field)

    def test_api_key_from_named_variable(self):
        """Test that the key is read from the configured variable."""
        config = MllmClientConfig(stub=True, api_key_env="MY_KEY")
        with patch.dict(os.environ, {"MY_KEY": "s3cret"}):
            assert config.api_key == "s3cret"
        with patch.dict(os.environ, {"MY_KEY": ""}):
            assert config.api_key is None


class TestFromEnv:
    """Tests for environment resolution."""

    def test_reads_environment(self, clean_env):
        """Test endpoint, model, timeout and key variable from the environment."""
        env = {
            "AUTHGUARD_MLLM_ENDPOINT": " https://env.example.com/chat ",
            "AUTHGUARD_MLLM_MODEL": "other-vision",
            "AUTHGUARD_MLLM_TIMEOUT": "12.5",
            "AUTHGUARD_MLLM_API_KEY_ENV": "ENV_KEY",
        }
        with patch.dict(os.environ, env):
            config = MllmClientConfig.from_env()
        assert config.endpoint == "https://env.example.com/chat"
        assert config.model == "other-vision"
        assert config.timeout == 12.5
        assert config.api_key_env == "ENV_KEY"

    def test_overrides_win_and_none_is_ignored(self, clean_env):
        """Test that explicit values beat the environment and None keeps it."""
        with patch.dict(os.environ, {"AUTHGUARD_MLLM_ENDPOINT": "https://env.example.com/chat"}):
            config = MllmClientConfig.from_env(endpoint="https://flag.example.com/chat", model=None)
        assert config.endpoint == "https://flag.example.com/chat"
        assert config.model == DEFAULT_MODEL

    def test_invalid_timeout_falls_back(self, clean_env):
        """Test that a malformed timeout keeps the default."""
        with patch.dict(os.environ, {"AUTHGUARD_MLLM_TIMEOUT": "soon"}):
            assert MllmClientConfig.from_env(stub=True).timeout == 60.0

    def test_missing_endpoint(self, clean_env):
        """Test that nothing configured is a config error."""
        with pytest.raises(AuthGuardError) as exc_info:
            MllmClientConfig.from_env()
        assert exc_info.value.error_code == ErrorCode.CONFIG_ERROR
