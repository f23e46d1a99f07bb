"""Failure domain of the export tool."""


class ExportError(Exception):
    """Weight loading, graph export or verification failure."""
