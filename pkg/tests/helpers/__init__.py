"""Test helpers and utilities."""
