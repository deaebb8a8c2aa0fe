"""
Logging utilities for quadnpmle.

Provides the centralized logging entry point used by every module. The CLI
registers a sink at startup; library callers get a stderr fallback so stdout
stays free for machine-readable output.
"""

from __future__ import annotations

import sys
from collections.abc import Callable

# === LOGGING FUNCTIONS ===


def safe_push_log(message: str) -> None:
    """
    Safe logging function that works even if no sink is registered yet.

    This is the primary logging function for all modules. It uses the
    registered sink when available, otherwise falls back to stderr.

    Args:
        message: Message to log safely
    """
    if _main_push_log is not None:
        try:
            _main_push_log(message)
            return
        except Exception:
            pass

    _safe_push_log_fallback(message)


# Global variable to store the registered sink
_main_push_log: Callable[[str], None] | None = None


def register_main_push_log(push_log_func: Callable[[str], None] | None) -> None:
    """Register the sink used by safe_push_log (None restores the fallback)"""
    global _main_push_log
    _main_push_log = push_log_func


_debug_override: bool | None = None


def set_debug(enabled: bool | None) -> None:
    """Force debug output on or off (None defers to the DEBUG setting)"""
    global _debug_override
    _debug_override = enabled


def push_debug(message: str) -> None:
    """
    Log a message only when debug output is on.

    Args:
        message: Debug message to log
    """
    if _debug_override is not None:
        if _debug_override:
            safe_push_log(f"🐞 {message}")
        return
    try:
        from quadnpmle.config import get_settings

        if not get_settings().DEBUG:
            return
    except Exception:
        return

    safe_push_log(f"🐞 {message}")


def log_title(title: str, underline_char: str = "─") -> None:
    """
    Log a title with automatic underline matching the exact title length

    Args:
        title: The title text to display
        underline_char: Character to use for underline (default: ─)
    """
    safe_push_log(title)
    safe_push_log(underline_char * len(title))


def log_timing(label: str, seconds: float) -> None:
    """Log a wall-clock timing in a consistent format"""
    safe_push_log(f"⏱️ {label}: {seconds:.3f}s")


# === HELPER FUNCTIONS (INTERNAL) ===


def _safe_push_log_fallback(message: str) -> None:
    """
    Internal fallback when no sink has been registered.

    Args:
        message: Message to log
    """
    try:
        print(f"[LOG] {message}", file=sys.stderr)
    except Exception:
        pass
