import sys
from pathlib import Path

from acns import config as cfgmod

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"


def out_root():
    """Output directory from argv[1], default demos/out/<script name>."""
    if len(sys.argv) > 1:
        return Path(sys.argv[1])
    return HERE / "out" / Path(sys.argv[0]).stem


def load(name):
    return cfgmod.load(CONFIGS / name)
