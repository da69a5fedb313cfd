import sys

from kgsparql.cli import main

sys.exit(main())
