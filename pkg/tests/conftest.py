"""Shared test fixtures and configuration."""

import os

import pytest

from mcp_guardrails.mc_engine import RngStream


@pytest.fixture(scope="function", autouse=True)
def clean_guardrails_env(monkeypatch: pytest.MonkeyPatch):
    """Keep GUARDRAILS_* variables from the developer's shell out of the tests."""
    for name in list(os.environ):
        if name.startswith("GUARDRAILS_"):
            monkeypatch.delenv(name, raising=False)
    yield


@pytest.fixture
def stream():
    """A fixed root stream; tests derive children from it."""
    return RngStream(20240601)
