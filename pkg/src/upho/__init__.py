"""Urban population health observatory toolkit.

Spatial surveillance analytics (regression, hotspot detection, causal
screening, intervention impact), a content-addressed results repository,
and a role-gated HTTP service over precomputed results.
"""

__version__ = "0.1.0"
