"""Entry point for ``python -m berkson_md``."""

import sys

from berkson_md.cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
