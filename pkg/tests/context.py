import os
import sys

# Tests run against the working tree, not an installed beamx
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import beamx
