"""Quality-diversity action repertoires and local Jacobian adaptation for a desk-scale arm."""
__version__ = "0.1.0"
