#!/usr/bin/env python3
"""
MIMO Duality Bench

Main entry point for the robust sum-AMSE transceiver design tool.
Runs `mimo-duality run|solve|verify`; see docs/CLI_GUIDE.md.
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
