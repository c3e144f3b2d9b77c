"""asa: distributed constructive-simulation environment.

Deterministic fixed-step agent engine, template-driven batch experiments,
a manager/node cluster speaking a length-prefixed wire protocol, durable
per-step record logs with replay, and post-processing analytics.
"""

__version__ = "0.1.0"
