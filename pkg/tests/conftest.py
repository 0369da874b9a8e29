#!/usr/bin/env python3
"""
Shared pytest configuration: the `slow` marker for long learning-curve
reproductions, skipped unless ADAMVE_RUN_SLOW=1.
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long reproduction run (set ADAMVE_RUN_SLOW=1 to enable)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ADAMVE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="slow reproduction run; set ADAMVE_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
