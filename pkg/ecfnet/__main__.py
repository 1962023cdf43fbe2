from __future__ import annotations

import sys

from ecfnet.management import execute_from_command_line


def main(argv=None):
    return execute_from_command_line(argv)


if __name__ == "__main__":
    sys.exit(main())
