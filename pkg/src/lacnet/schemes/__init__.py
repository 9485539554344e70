"""Task-allocation strategies behind one allocator interface."""

from .base import Allocator
from .cbba import CbbaAllocator
from .cta import CtaAllocator
from .rwa import RwaAllocator

ALLOCATORS = {"cta": CtaAllocator, "cbba": CbbaAllocator, "rwa": RwaAllocator}


def make_allocator(scheme: str, world) -> Allocator:
    try:
        cls = ALLOCATORS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}") from None
    return cls(world)


__all__ = ["Allocator", "CtaAllocator", "CbbaAllocator", "RwaAllocator", "make_allocator"]
