import runpy
import sys
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def run_script(name, argv):
    old = sys.argv
    sys.argv = [name] + list(argv)
    try:
        mod = runpy.run_path(str(SCRIPTS / name))
        return mod["main"](argv)
    finally:
        sys.argv = old
