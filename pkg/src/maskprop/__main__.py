import sys

from maskprop.cli import main

sys.exit(main())
