from .metrics import Metrics, MetricsError, TimeoutMetrics, compute_metrics, progress_curve, speed_index
from .model import (
    DEFAULT_PRIORITIES,
    Browser,
    BrowserConfig,
    BytesArrived,
    CancelPush,
    ConnectEnd,
    FetchRequest,
    InternalError,
    Milestone,
    PageState,
    PushPromised,
    StreamCompleted,
    Timer,
    WakeAt,
    priority_class,
)
from .scanner import Blocking, ParserBarrier, ResourceRef, Scanner, scan, scan_css

__all__ = [n for n in dir() if not n.startswith("_")]
