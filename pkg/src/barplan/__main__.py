import sys

from barplan.cli import main

sys.exit(main())
