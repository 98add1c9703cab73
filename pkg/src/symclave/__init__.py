"""symclave: symbolic-execution vulnerability analyzer for enclave programs."""

__version__ = "0.1.0"
