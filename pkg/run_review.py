"""
Script to run the fixity review command line.
"""

import sys

from src.cli.main import main
from src.utils.logger import get_logger

logger = get_logger()

if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception as e:
        logger.error(f"Error running fixity-review: {e}")
        raise
