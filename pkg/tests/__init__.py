"""Tests for pmn."""
