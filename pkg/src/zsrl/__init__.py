"""Zero-shot sketch-to-photo retrieval learning at desk scale.

Student encoder trained with a domain-aware quadruplet loss, a seen-class
classification loss and a soft-label knowledge-preservation loss, plus a
ranked-retrieval evaluation engine and synthetic two-domain data.
"""

__version__ = "0.1.0"
