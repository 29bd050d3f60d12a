import sys

from turbinewatch.cli import main

sys.exit(main())
