#!/usr/bin/env python3
"""Liouville corner lab entry point.

This is a thin wrapper around lab_core.main().
All logic is in lab_core.py for testability.
"""

import asyncio
import sys

from lab_core import main

if __name__ == "__main__":
    sys.exit(asyncio.run(main(sys.argv[1:])))
