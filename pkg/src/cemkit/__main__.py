import sys

from cemkit.cli import main

sys.exit(main())
