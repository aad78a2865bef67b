import sys

from flexpi.bench.cli import main

sys.exit(main())
