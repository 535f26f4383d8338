# beamcast/__init__.py
# Broadcast-capacity laboratory for line-of-sight wireless networks.

__version__ = "0.3.0"
