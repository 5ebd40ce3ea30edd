"""Tests for tt_pricing package."""
