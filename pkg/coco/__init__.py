"""Causal coefficient estimation with CoCo penalties across environments."""
