"""Core simulation modules: models, network, IntVs, control, integration."""
