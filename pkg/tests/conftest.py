import sys
from pathlib import Path

# make the shared test helpers (oracles, reference_rf) importable
sys.path.insert(0, str(Path(__file__).parent))
