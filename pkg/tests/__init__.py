"""Tests for the sdaclab package."""
