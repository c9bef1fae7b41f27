#!/usr/bin/env python3

"""
Main entry point for the mmuplan package when executed as `python -m mmuplan`.
"""

import asyncio
import sys
from .cli import main

if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
