"""Batch feature export: manifest audio -> per-ear, per-pathway SIFB files.

The package is a standalone ETL step. It talks to downstream consumers only
through files: JSON-lines manifests in, SIFB feature files and a rewritten
manifest out. Models are pluggable; two built-in stubs (framed waveform and
log-mel) cover testing without any checkpoint downloads.
"""

from .errors import ExportError, ModelError, SifbFormatError
from .export import ExportJob, ExportReport, export
from .models import FeatureModel, load_model
from .sifb import read_sifb, write_sifb

__all__ = [
    "ExportError",
    "ExportJob",
    "ExportReport",
    "FeatureModel",
    "ModelError",
    "SifbFormatError",
    "export",
    "load_model",
    "read_sifb",
    "write_sifb",
]
