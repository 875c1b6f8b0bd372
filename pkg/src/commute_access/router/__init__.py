"""Walk + transit routing: network loading, RAPTOR search, travel-time matrices."""

from .matrix import TravelTimeMatrix, build_matrix, departure_times, shortest_time
from .network import (Network, NetworkError, Timetable, TripRecord, WalkGraph, build_network,
                      read_gtfs, read_streets)
from .raptor import raptor

__all__ = [
    "Network", "NetworkError", "Timetable", "TravelTimeMatrix", "TripRecord", "WalkGraph",
    "build_matrix", "build_network", "departure_times", "raptor", "read_gtfs", "read_streets",
    "shortest_time",
]
