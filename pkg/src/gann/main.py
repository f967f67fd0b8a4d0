"""Main entry point for the gann command line."""

import logging
import sys
from typing import Optional, Sequence

from .bench import cli
from .config import settings


def configure_logging(level: Optional[str] = None) -> None:
    """Send log records to stderr at ``settings.log_level``."""
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Console-script entry point."""
    configure_logging()
    try:
        status = cli(argv)
    except KeyboardInterrupt:
        logging.getLogger(__name__).info("interrupted")
        status = 130
    sys.exit(status)


if __name__ == "__main__":
    main()
