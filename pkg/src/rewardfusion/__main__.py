import sys

from rewardfusion.cli import main

sys.exit(main())
