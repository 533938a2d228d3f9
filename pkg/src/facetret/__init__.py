"""Promptable-embedding text-to-image retrieval engine and evaluation harness."""
