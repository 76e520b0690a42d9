"""mlang: compiler and discrete-event simulator for the M modeling language."""

__version__ = "0.1.0"
