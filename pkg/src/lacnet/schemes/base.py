from __future__ import annotations


class Allocator:
    """Event-driven allocator seam shared by every scheme.

    A task is handed to at most one executor through ``world.dispatch``;
    schemes never reassign a task unless they detected a failure first.
    """

    name = ""

    def __init__(self, world):
        self.world = world
        self.sim = world.sim
        self.cfg = world.cfg

    def start(self) -> None:
        pass

    def on_task_arrival(self, rec) -> None:
        raise NotImplementedError

    def on_result(self, rec, t: float) -> None:
        pass

    def on_deadline(self, rec, t: float) -> None:
        pass

    def diagnostics(self) -> dict:
        return {}
