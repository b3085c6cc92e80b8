from .pipeline import EnrichConfig, Session, SessionStore, downstream_of

__all__ = ["EnrichConfig", "Session", "SessionStore", "downstream_of"]
