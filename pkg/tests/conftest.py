import sys
from pathlib import Path

# allow the acceptance module to reuse oracles defined in sibling test files
sys.path.insert(0, str(Path(__file__).parent))
