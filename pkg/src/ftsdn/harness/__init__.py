"""Scenario runner, transports, fault injection, benchmark, and checker."""
