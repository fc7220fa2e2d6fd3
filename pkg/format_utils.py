"""
Formatting utility functions for consistent display of losses, rates and
statistics in logs, CLI output and the dashboard
"""

import math


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def format_number(num, decimal_places=4):
    """
    Format a number with specified decimal places

    Args:
        num: Number to format
        decimal_places (int): Number of decimal places to display

    Returns:
        str: Formatted number, "N/A" for missing or non-finite values
    """
    if not _is_number(num):
        return "N/A"
    return f"{num:.{decimal_places}f}"


def format_percent(value, decimal_places=1):
    """
    Format a fraction as a percentage

    Args:
        value: Fraction to format (0.01 = 1%)
        decimal_places (int): Number of decimal places to display

    Returns:
        str: Formatted percentage string
    """
    if not _is_number(value):
        return "N/A"
    return f"{value * 100:.{decimal_places}f}%"


def format_mean_std(mean, std, decimal_places=3):
    """
    Format a statistic as "mean ± std"

    Args:
        mean: Sample mean
        std: Sample standard deviation
        decimal_places (int): Number of decimal places to display

    Returns:
        str: Formatted statistic
    """
    if not _is_number(mean):
        return "N/A"
    if not _is_number(std):
        return format_number(mean, decimal_places)
    return f"{mean:.{decimal_places}f} ± {std:.{decimal_places}f}"


def format_signed_percent(value, decimal_places=2):
    """Relative change with an explicit sign, e.g. "-38.02%"."""
    if not _is_number(value):
        return "N/A"
    return f"{value * 100:+.{decimal_places}f}%"


def format_loss_line(row, decimal_places=4):
    """
    Labeled single-line view of a loss breakdown

    Args:
        row (dict): Column name -> value, as produced by LossBreakdown.as_row()
        decimal_places (int): Number of decimal places to display

    Returns:
        str: e.g. "total=1.2345 T_trav=0.1000 ..."
    """
    return " ".join(f"{key}={format_number(value, decimal_places)}" for key, value in row.items())


def format_point(point, decimal_places=3):
    if point is None:
        return "N/A"
    return "(" + ", ".join(format_number(float(v), decimal_places) for v in point) + ")"
