#!/usr/bin/env python3
"""Simple startup script for the gann query server."""

import sys
from pathlib import Path

# Add src to path
src_path = Path(__file__).parent / "src"
sys.path.insert(0, str(src_path))

from gann.main import main

if __name__ == "__main__":
    main(["serve", *sys.argv[1:]])
