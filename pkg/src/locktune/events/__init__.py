from .store import EVENT_TYPES, Event, EventStore, RunStats, summarize

__all__ = ["EVENT_TYPES", "Event", "EventStore", "RunStats", "summarize"]
