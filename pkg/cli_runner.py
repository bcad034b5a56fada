#!/usr/bin/env python3
"""
Portrait Lab CLI Runner
"""

import logging

from rich.logging import RichHandler

from portrait_lab.cli import app
from portrait_lab.ui import console


def main():
    logging.basicConfig(
        level=logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)]
    )

    app()


if __name__ == "__main__":
    main()
