"""Observation records shared by every pipeline stage."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .errors import InputError


@dataclass(frozen=True)
class Observation:
    """One detection: a vehicle seen by a camera at a frame timestamp."""

    image_id: str
    vehicle_id: str
    camera_id: int
    frame: int

    def __post_init__(self):
        if self.camera_id < 0:
            raise InputError(
                f"camera_id must be non-negative, got {self.camera_id} "
                f"(image_id {self.image_id!r})"
            )
        if self.frame < 0:
            raise InputError(
                f"frame must be non-negative, got {self.frame} "
                f"(image_id {self.image_id!r})"
            )


def group_by_vehicle(observations: list[Observation]) -> dict[str, list[Observation]]:
    """Group observations by vehicle id, preserving input order inside groups."""
    groups: dict[str, list[Observation]] = defaultdict(list)
    for obs in observations:
        groups[obs.vehicle_id].append(obs)
    return dict(groups)
