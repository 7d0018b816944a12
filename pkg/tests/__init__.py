"""Test suite for voice portfolio agent."""
