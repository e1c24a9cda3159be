"""End-to-end synthetic runs for AuthGuard."""
