"""Trust-backed decentralised identity provisioning over a simulated network."""

from .trust_core import (ArcKind, ExperienceReport, TrustArc, TrustContext, TrustStore,
                         IDENTITY_PROVISION, MAINTAIN_PRIVACY, MAKE_GOOD_ASSERTIONS)
from .trust_network import (AggregationStrategy, Basis, PathQuery, TrustManager, TrustPath,
                            aggregate, brute_force_oracle, path_score, validate_path)

__version__ = "0.1.0"
