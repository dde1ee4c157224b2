import sys

from sbfiml import main

if __name__ == "__main__":
    sys.exit(main())
