"""Tests for linux-desktop-mcp."""
