"""Unit tests for rampwatch."""
