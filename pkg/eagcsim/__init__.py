"""
EAGC-Sim: nonlinear power-system frequency dynamics simulator.

Generator/load/line dq-frame models, interaction-variable (IntV) bookkeeping and
three frequency controllers: primary droop, conventional ACE-based AGC and the
IntV-based Enhanced AGC with LQR coordination.
"""

__version__ = "1.0.0"
__author__ = "EAGC-Sim Team"
