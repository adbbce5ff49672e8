"""Oracle-dependency analysis of EVM bytecode and profit-based attack monitoring."""

__version__ = "0.1.0"
