"""HTTP adapter exposing local generation/VQA models behind the dsg wire protocol."""

__version__ = "0.1.0"
