from .parallel import chunk_bounds, map_chunks
from .resources import default_thread_count, process_footprint

__all__ = ["chunk_bounds", "map_chunks", "default_thread_count", "process_footprint"]
