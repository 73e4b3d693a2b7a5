import sys

from multicac.cli import main

sys.exit(main())
