"""
Verbosity-gated console reporter used by the orchestrators and the CLI.
"""

from typing import Any, Dict, Optional


class Reporter:
    """Plain-text progress output with a run-context prefix"""

    def __init__(self, verbosity: int = 0):
        self.verbosity = verbosity
        self.context = ""

    def set_context(self, context: str):
        self.context = context

    def log(self, level: int, message: str, context_prefix: bool = True):
        """Log a message if verbosity level is sufficient"""
        if self.verbosity >= level:
            prefix = f"[{self.context}] " if context_prefix and self.context else ""
            print(f"{prefix}{message}")

    def log_info(self, message: str, context_prefix: bool = True):
        """Log info level message (verbosity >= 1)"""
        self.log(1, message, context_prefix)

    def log_verbose(self, message: str, context_prefix: bool = True):
        """Log verbose message (verbosity >= 2)"""
        self.log(2, f"  {message}", context_prefix)

    def log_debug(self, message: str, context_prefix: bool = True):
        """Log debug message (verbosity >= 3)"""
        self.log(3, f"    {message}", context_prefix)

    def log_warning(self, message: str, context_prefix: bool = True):
        """Log warning message (verbosity >= 0, so only --quiet hides it)"""
        self.log(0, f"Warning: {message}", context_prefix)

    def log_section(self, title: str):
        """Log a section header"""
        if self.verbosity >= 1:
            print(f"\n{'='*60}")
            print(f"  {title}")
            print("=" * 60)

    def log_summary(self, title: str, rows: Dict[str, Any], extra: Optional[Dict[str, Any]] = None):
        """Log a final summary block (verbosity >= 0)"""
        if self.verbosity < 0:
            return
        print(f"\n{'='*60}")
        print(f"  {title.upper()}")
        print("=" * 60)
        for name, value in rows.items():
            print(f"{name}: {_format_value(value)}")
        for name, value in (extra or {}).items():
            print(f"  - {name}: {_format_value(value)}")
        print("=" * 60)


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    if isinstance(value, dict):
        return ", ".join(f"{k}={_format_value(v)}" for k, v in value.items())
    return str(value)


class SilentReporter(Reporter):
    """Reporter that prints nothing; default for library calls"""

    def __init__(self):
        super().__init__(verbosity=-1)


def ensure_reporter(reporter: Optional[Reporter]) -> Reporter:
    return reporter if reporter is not None else SilentReporter()
