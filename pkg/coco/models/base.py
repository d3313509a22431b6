from __future__ import annotations

from enum import Enum


def _squash(value: str) -> str:
    return value.strip().lower().replace("_", "").replace("-", "").replace(" ", "")


class LookupEnum(str, Enum):
    """String enum that accepts case, dash and underscore variations of its values and names."""

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            wanted = _squash(value)
            for member in cls:
                if _squash(member.value) == wanted or _squash(member.name) == wanted:
                    return member
        return None
