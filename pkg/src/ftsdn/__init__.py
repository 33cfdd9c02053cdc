"""Fault-tolerant SDN control plane at desk scale.

Controller replicas process switch events transactionally and exactly once,
backed by a strongly consistent shared log. Commands reach switches inside
atomic bundles whose commit is broadcast back to every replica, so a newly
elected master never re-executes work a switch already performed.
"""

__version__ = "0.1.0"
