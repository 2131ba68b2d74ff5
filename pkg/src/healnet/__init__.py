"""Self-healing expander overlay: p-cycle virtual graphs kept alive under adversarial churn."""
from .pcycle import PCycle, pcycle
from .protocol import Overlay, ProtocolConfig

__all__ = ["Overlay", "PCycle", "ProtocolConfig", "pcycle"]
