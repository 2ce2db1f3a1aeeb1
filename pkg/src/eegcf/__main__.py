import sys

from eegcf.cli import main

sys.exit(main())
