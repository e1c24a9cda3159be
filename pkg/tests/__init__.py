"""Test package for AuthGuard."""
