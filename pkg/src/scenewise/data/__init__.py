"""Manifests, device registry and the synthetic device-shift generator."""
