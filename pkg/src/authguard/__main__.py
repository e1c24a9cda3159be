"""Main entry point for AuthGuard."""

# Import built-in modules
import sys

# Import local modules
from authguard.cli import main

if __name__ == "__main__":
    sys.exit(main())
