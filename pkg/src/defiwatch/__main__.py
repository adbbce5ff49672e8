import sys

from defiwatch.cli import main

sys.exit(main())
