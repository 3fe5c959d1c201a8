import sys

from polar_odom.cli import main


if __name__ == "__main__":
    sys.exit(main())
