"""Offline bridge: run a frozen pre-trained sentence encoder over a rendered
prompt dump and write a CEMB cell-embedding cache."""

from .export import (CACHE_MAGIC, CACHE_VERSION, PROVIDER_EXTERNAL,
                     ExportError, ExporterConfig, PromptDump, export,
                     read_prompts, write_cemb)

__all__ = [
    "CACHE_MAGIC", "CACHE_VERSION", "PROVIDER_EXTERNAL", "ExportError",
    "ExporterConfig", "PromptDump", "export", "read_prompts", "write_cemb",
]
