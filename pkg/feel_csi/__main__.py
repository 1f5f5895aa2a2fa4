"""Allow running as ``python -m feel_csi``."""

from feel_csi._cli import main

main()
