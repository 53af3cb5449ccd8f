import sys

from recolor_fad.cli import main

sys.exit(main())
