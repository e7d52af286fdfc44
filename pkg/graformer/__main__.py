# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""graformer's main entry point."""

import sys
from graformer.cmdline import main
sys.exit(main())
