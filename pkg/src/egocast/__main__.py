import sys

from egocast.cli import main

sys.exit(main())
