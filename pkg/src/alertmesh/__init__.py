"""alertmesh: content-based publish/subscribe infrastructure for security alerts.

An embeddable notification broker with a multi-broker overlay, an
IDMEF-style alert model, an alert processing pipeline (analyzers,
aggregation/correlation/policy managers), and a replay harness for
throughput and latency measurements.
"""

from .broker import Broker, Notification
from .filters import FilterExpr, Subscription, compile as compile_filter, matches
from .idmef import (
    Alert,
    Analyzer,
    Assessment,
    Classification,
    Endpoint,
    Header,
    Instant,
    Kind,
    Timestamps,
    build_alert,
    forward_rewrap,
    parse,
    project_header,
    serialize,
)

__all__ = [
    "Alert", "Analyzer", "Assessment", "Broker", "Classification", "Endpoint",
    "FilterExpr", "Header", "Instant", "Kind", "Notification", "Subscription",
    "Timestamps", "build_alert", "compile_filter", "forward_rewrap", "matches",
    "parse", "project_header", "serialize",
]

__version__ = "0.1.0"
