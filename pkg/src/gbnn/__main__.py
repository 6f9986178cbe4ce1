import sys

from gbnn.cli import main

sys.exit(main())
