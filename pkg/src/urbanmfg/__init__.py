"""Two-population mean field games on road networks with a transport-based labour market."""

__version__ = "0.1.0"
