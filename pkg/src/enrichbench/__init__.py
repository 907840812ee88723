"""enrichbench: a deterministic virtual-time lab for stream-enrichment benchmarks.

The package simulates a parallel stream-processing job (sources, keyed sliding
windows, bounded queues with backpressure, checkpoint/restore with failure
injection) together with the external services the job talks to (a table
store, a shared cache service, an object store for model blobs).  Seven
enrichment paths can be plugged into the job and compared under identical,
fully reproducible workloads.  Every run writes a fixed set of delimited
metric files plus a JSON manifest; the command line can also render quick-look
figures from those files.

All time is virtual (integer microseconds), so multi-hour experiments replay
in seconds and every run is bit-reproducible for a given master seed.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
