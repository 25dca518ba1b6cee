"""Bundled scenario files (JSON)."""
