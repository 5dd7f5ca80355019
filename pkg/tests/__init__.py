"""Tests for the refpriv benchmark."""
