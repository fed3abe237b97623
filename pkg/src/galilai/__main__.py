import sys

from galilai.cli import main

sys.exit(main())
