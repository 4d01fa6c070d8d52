# Core services - shared between the experiment runners and tests

__version__ = "0.1.0"
