"""MLLM client configuration for caption generation.

Configuration is resolved in this order (later wins):

1. Built-in defaults (stub client off, 3 retries, 4 concurrent requests).
2. Environment variables:
   - AUTHGUARD_MLLM_ENDPOINT: chat-completion URL
   - AUTHGUARD_MLLM_MODEL: model name sent with each request
   - AUTHGUARD_MLLM_TIMEOUT: request timeout in seconds
   - AUTHGUARD_MLLM_API_KEY_ENV: name of the variable holding the API key
     (default AUTHGUARD_API_KEY)
3. Explicit keyword overrides, typically CLI flags.
"""

# Import built-in modules
from dataclasses import dataclass
import os
from typing import Any

# Import third-party modules
from loguru import logger

# Import local modules
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode

# Constants
ENV_ENDPOINT = "AUTHGUARD_MLLM_ENDPOINT"
ENV_MODEL = "AUTHGUARD_MLLM_MODEL"
ENV_TIMEOUT = "AUTHGUARD_MLLM_TIMEOUT"
ENV_API_KEY_NAME = "AUTHGUARD_MLLM_API_KEY_ENV"
DEFAULT_API_KEY_ENV = "AUTHGUARD_API_KEY"
DEFAULT_MODEL = "llama-3.2-vision"


@dataclass
class MllmClientConfig:
    """Connection settings of the captioning MLLM.

    Attributes:
        endpoint: HTTP(S) URL of the chat-completion endpoint; unused by the stub.
        model: Model name sent with each request.
        api_key_env: Name of the environment variable that holds the API key.
        timeout: Per-request timeout in seconds.
        retries: Retries after the first failed attempt.
        backoff: Base of the exponential backoff in seconds.
        concurrency: Maximum number of in-flight requests.
        stub: Use the deterministic offline client.

    """

    endpoint: str = ""
    model: str = DEFAULT_MODEL
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    concurrency: int = 4
    stub: bool = False

    def __post_init__(self) -> None:
        """Validate the client configuration after initialization."""
        if self.retries < 0:
            raise AuthGuardError(f"retries must be >= 0, got {self.retries}", ErrorCode.CONFIG_ERROR)
        if self.concurrency < 1:
            raise AuthGuardError(f"concurrency must be >= 1, got {self.concurrency}", ErrorCode.CONFIG_ERROR)
        if self.timeout <= 0:
            raise AuthGuardError(f"timeout must be positive, got {self.timeout}", ErrorCode.CONFIG_ERROR)
        if self.stub:
            return
        if not self.endpoint:
            raise AuthGuardError(
                f"No MLLM endpoint configured. Set {ENV_ENDPOINT}, pass --endpoint, or use --stub.",
                ErrorCode.CONFIG_ERROR,
            )
        if not self.endpoint.startswith(("http://", "https://")):
            raise AuthGuardError(
                f"MLLM endpoint must start with 'http://' or 'https://'. Got: '{self.endpoint}'",
                ErrorCode.CONFIG_ERROR,
            )

    @property
    def api_key(self) -> str | None:
        """API key read from the configured environment variable, if set."""
        return os.getenv(self.api_key_env) or None

    @classmethod
    def from_env(cls, **overrides: Any) -> "MllmClientConfig":
        """Build a configuration from environment variables and overrides.

        Args:
            **overrides: Field values that take precedence; None values are ignored.

        Returns:
            MllmClientConfig: Validated configuration.

        """
        values: dict[str, Any] = {}
        if os.getenv(ENV_ENDPOINT):
            values["endpoint"] = os.environ[ENV_ENDPOINT].strip()
        if os.getenv(ENV_MODEL):
            values["model"] = os.environ[ENV_MODEL].strip()
        if os.getenv(ENV_API_KEY_NAME):
            values["api_key_env"] = os.environ[ENV_API_KEY_NAME].strip()
        timeout = os.getenv(ENV_TIMEOUT, "")
        if timeout:
            try:
                values["timeout"] = float(timeout)
            except ValueError:
                logger.warning(f"Invalid {ENV_TIMEOUT}: {timeout!r}, using default")
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)
