"""Software replay of time-domain many-body spectroscopy on Bose-Hubbard chains."""

__version__ = "0.1.0"
