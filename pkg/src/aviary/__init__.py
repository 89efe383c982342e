"""aviary: self-hosted bird feeder monitoring server.

Ingests motion-triggered clips (FTP push or watched directory), localizes
birds, classifies species, auto-logs confident sightings, and queues the rest
for human review.
"""

__version__ = "0.1.0"
