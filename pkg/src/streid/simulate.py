"""Synthetic camera networks, vehicle traffic, and appearance similarities.

Vehicles random-walk a road graph whose edges carry transit-time
distributions; every camera visit emits an observation. Appearance
similarity for each query-gallery pair is drawn from a Beta distribution
chosen by the pair's relationship (same vehicle, same model-type cluster,
or unrelated), which makes appearance ambiguity a directly tunable knob.
Everything is derived from one seed, so outputs are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .evaluation import SimilarityMatrix
from .observations import Observation

MAX_WALK_ATTEMPTS = 100


@dataclass(frozen=True)
class RoadEdge:
    """Directed road segment with a transit-time model and a pick weight."""

    from_camera: int
    to_camera: int
    mean_frames: float
    stdev_frames: float
    weight: float = 1.0


@dataclass
class SimConfig:
    n_cameras: int
    n_vehicles: int
    n_model_types: int
    road_edges: list[RoadEdge]
    frames_horizon: int
    same_id_beta: tuple[float, float] = (8.0, 2.0)
    same_cluster_beta: tuple[float, float] = (6.0, 3.0)
    cross_cluster_beta: tuple[float, float] = (2.0, 8.0)
    seed: int = 0
    max_visits: int = 16

    def validate(self) -> None:
        if min(self.n_cameras, self.n_vehicles, self.n_model_types) < 1:
            raise ConfigurationError("camera, vehicle, and cluster counts must be positive")
        if self.frames_horizon < 1 or self.max_visits < 2:
            raise ConfigurationError("frames_horizon must be >= 1 and max_visits >= 2")
        if not self.road_edges:
            raise ConfigurationError("road_edges must be non-empty")
        for e in self.road_edges:
            if not (0 <= e.from_camera < self.n_cameras and 0 <= e.to_camera < self.n_cameras):
                raise ConfigurationError(
                    f"edge ({e.from_camera}, {e.to_camera}) endpoint out of range"
                )
            if e.mean_frames <= 0 or e.stdev_frames < 0 or e.weight <= 0:
                raise ConfigurationError(
                    f"edge ({e.from_camera}, {e.to_camera}) needs positive mean and "
                    f"weight and non-negative stdev"
                )
        for params in (self.same_id_beta, self.same_cluster_beta, self.cross_cluster_beta):
            if params[0] <= 0 or params[1] <= 0:
                raise ConfigurationError("Beta parameters must be positive")
        _check_connected(self.n_cameras, self.road_edges)

    @classmethod
    def ring_network(
        cls,
        n_cameras: int,
        n_vehicles: int,
        n_model_types: int,
        mean_low: float = 1200.0,
        mean_high: float = 3200.0,
        stdev_frac: float = 0.06,
        chords: tuple[tuple[int, int], ...] = (),
        chord_weight: float = 0.6,
        frames_horizon: int = 26000,
        seed: int = 0,
        max_visits: int = 16,
    ) -> "SimConfig":
        """Bidirectional ring with optional chord shortcuts.

        Edge transit means are spaced evenly over [mean_low, mean_high]
        around the ring; the reverse direction of each segment runs 15%
        slower so the two directions are distinguishable.
        """
        edges = []
        for i in range(n_cameras):
            j = (i + 1) % n_cameras
            mean = mean_low + (mean_high - mean_low) * i / max(n_cameras - 1, 1)
            edges.append(RoadEdge(i, j, mean, mean * stdev_frac, 1.0))
            edges.append(RoadEdge(j, i, mean * 1.15, mean * 1.15 * stdev_frac, 1.0))
        for i, j in chords:
            mean = (mean_low + mean_high) / 2.0
            edges.append(RoadEdge(i, j, mean, mean * stdev_frac, chord_weight))
            edges.append(RoadEdge(j, i, mean, mean * stdev_frac, chord_weight))
        return cls(
            n_cameras=n_cameras,
            n_vehicles=n_vehicles,
            n_model_types=n_model_types,
            road_edges=edges,
            frames_horizon=frames_horizon,
            seed=seed,
            max_visits=max_visits,
        )

    def to_json_dict(self) -> dict:
        return {
            "n_cameras": self.n_cameras,
            "n_vehicles": self.n_vehicles,
            "n_model_types": self.n_model_types,
            "road_edges": [
                [e.from_camera, e.to_camera, e.mean_frames, e.stdev_frames, e.weight]
                for e in self.road_edges
            ],
            "frames_horizon": self.frames_horizon,
            "same_id_similarity": list(self.same_id_beta),
            "same_cluster_similarity": list(self.same_cluster_beta),
            "cross_cluster_similarity": list(self.cross_cluster_beta),
            "seed": self.seed,
            "max_visits": self.max_visits,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SimConfig":
        try:
            edges = [
                RoadEdge(int(e[0]), int(e[1]), float(e[2]), float(e[3]), float(e[4]))
                for e in doc["road_edges"]
            ]
            config = cls(
                n_cameras=int(doc["n_cameras"]),
                n_vehicles=int(doc["n_vehicles"]),
                n_model_types=int(doc["n_model_types"]),
                road_edges=edges,
                frames_horizon=int(doc["frames_horizon"]),
                same_id_beta=tuple(doc.get("same_id_similarity", (8.0, 2.0))),
                same_cluster_beta=tuple(doc.get("same_cluster_similarity", (6.0, 3.0))),
                cross_cluster_beta=tuple(doc.get("cross_cluster_similarity", (2.0, 8.0))),
                seed=int(doc.get("seed", 0)),
                max_visits=int(doc.get("max_visits", 16)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigurationError(f"invalid simulation config: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def from_json_file(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass
class EdgeTruth:
    """Generation parameters plus how often the edge was actually traversed."""

    from_camera: int
    to_camera: int
    mean_frames: float
    stdev_frames: float
    transitions: int


@dataclass
class SimOutput:
    observations: list[Observation]
    similarity: SimilarityMatrix
    edge_truth: list[EdgeTruth]
    vehicle_clusters: dict[str, int]

    def ground_truth_dict(self) -> dict:
        return {
            "edges": [
                {
                    "from_camera": e.from_camera,
                    "to_camera": e.to_camera,
                    "mean_frames": e.mean_frames,
                    "stdev_frames": e.stdev_frames,
                    "transitions": e.transitions,
                }
                for e in self.edge_truth
            ],
            "vehicle_clusters": dict(sorted(self.vehicle_clusters.items())),
        }


@dataclass
class AmbiguityReport:
    """How confusable appearances are under the drawn similarity matrix."""

    within_id_mean: float | None
    within_cluster_mean: float | None
    cross_cluster_mean: float | None
    top1_same_cluster_confusions: float | None
    n_within_id: int
    n_within_cluster: int
    n_cross_cluster: int
    degenerate: bool


def _check_connected(n_cameras: int, edges: list[RoadEdge]) -> None:
    adjacency: dict[int, set[int]] = {i: set() for i in range(n_cameras)}
    for e in edges:
        adjacency[e.from_camera].add(e.to_camera)
        adjacency[e.to_camera].add(e.from_camera)
    seen = {0}
    frontier = [0]
    while frontier:
        node = frontier.pop()
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    if len(seen) != n_cameras:
        missing = sorted(set(range(n_cameras)) - seen)
        raise ConfigurationError(f"road graph is disconnected; unreachable cameras {missing}")


def _positive_transit(rng: np.random.Generator, mean: float, stdev: float) -> int:
    # Normal truncated at zero: redraw instead of clamping to keep the shape.
    while True:
        value = rng.normal(mean, stdev)
        if value >= 0:
            return int(round(value))


def _walk(rng, config, outgoing, start_cameras):
    cam = int(start_cameras[rng.integers(len(start_cameras))])
    t = int(rng.integers(0, max(1, config.frames_horizon // 4)))
    visits = [(cam, t)]
    used = []
    while len(visits) < config.max_visits:
        options = outgoing.get(cam)
        if not options:
            break
        weights = np.array([config.road_edges[e].weight for e in options])
        pick = options[rng.choice(len(options), p=weights / weights.sum())]
        edge = config.road_edges[pick]
        t = t + _positive_transit(rng, edge.mean_frames, edge.stdev_frames)
        if t > config.frames_horizon:
            break
        cam = edge.to_camera
        visits.append((cam, t))
        used.append(pick)
    return visits, used


def simulate(config: SimConfig) -> SimOutput:
    """Generate observations, a query/gallery appearance matrix, and truth.

    Each vehicle walks the road graph (edges picked by weight, transit times
    from the edge's zero-truncated normal) until the horizon or the visit cap.
    One observation per vehicle is held out as its query; the rest form the
    gallery. Per-vehicle generator streams keep the output seed-deterministic.
    """
    config.validate()

    outgoing: dict[int, list[int]] = {}
    for idx, e in enumerate(config.road_edges):
        outgoing.setdefault(e.from_camera, []).append(idx)
    start_cameras = sorted(outgoing)
    if not start_cameras:
        raise ConfigurationError("no camera has an outgoing road edge")

    root = np.random.SeedSequence(config.seed)
    walk_seed, split_seed, similarity_seed = root.spawn(3)
    vehicle_seeds = walk_seed.spawn(config.n_vehicles)

    observations: list[Observation] = []
    per_vehicle: dict[str, list[Observation]] = {}
    clusters: dict[str, int] = {}
    edge_transitions = [0] * len(config.road_edges)
    for v in range(config.n_vehicles):
        vid = f"v{v:04d}"
        clusters[vid] = v % config.n_model_types
        rng = np.random.default_rng(vehicle_seeds[v])
        for _ in range(MAX_WALK_ATTEMPTS):
            visits, used = _walk(rng, config, outgoing, start_cameras)
            if len(visits) >= 2:
                break
        else:
            raise ConfigurationError(
                f"vehicle {vid}: could not place two in-horizon observations; "
                f"horizon {config.frames_horizon} is too small for the edge transit times"
            )
        records = [
            Observation(f"{vid}_{seq:03d}", vid, cam, t)
            for seq, (cam, t) in enumerate(visits)
        ]
        observations.extend(records)
        per_vehicle[vid] = records
        for e in used:
            edge_transitions[e] += 1

    split_rng = np.random.default_rng(split_seed)
    queries: list[Observation] = []
    galleries: list[Observation] = []
    for vid in sorted(per_vehicle):
        records = per_vehicle[vid]
        held_out = int(split_rng.integers(len(records)))
        queries.append(records[held_out])
        galleries.extend(r for k, r in enumerate(records) if k != held_out)

    sim_rng = np.random.default_rng(similarity_seed)
    q_vids = np.array([q.vehicle_id for q in queries])
    g_vids = np.array([g.vehicle_id for g in galleries])
    q_clusters = np.array([clusters[v] for v in q_vids])
    g_clusters = np.array([clusters[v] for v in g_vids])
    same_id = q_vids[:, None] == g_vids[None, :]
    same_cluster = (q_clusters[:, None] == g_clusters[None, :]) & ~same_id

    shape = same_id.shape
    values = sim_rng.beta(*config.cross_cluster_beta, size=shape)
    values[same_cluster] = sim_rng.beta(*config.same_cluster_beta, size=int(same_cluster.sum()))
    values[same_id] = sim_rng.beta(*config.same_id_beta, size=int(same_id.sum()))

    similarity = SimilarityMatrix(
        [q.image_id for q in queries], [g.image_id for g in galleries], values
    )
    edge_truth = [
        EdgeTruth(e.from_camera, e.to_camera, e.mean_frames, e.stdev_frames, n)
        for e, n in zip(config.road_edges, edge_transitions)
    ]
    return SimOutput(observations, similarity, edge_truth, clusters)


def ambiguity_report(output: SimOutput) -> AmbiguityReport:
    """Summarize appearance confusability of a simulated dataset."""
    by_id = {o.image_id: o for o in output.observations}
    missing = [
        i
        for i in output.similarity.query_ids + output.similarity.gallery_ids
        if i not in by_id
    ]
    if missing:
        raise InputError(f"similarity references unknown image ids: {missing[:5]}")

    clusters = output.vehicle_clusters
    q_vids = np.array([by_id[i].vehicle_id for i in output.similarity.query_ids])
    g_vids = np.array([by_id[i].vehicle_id for i in output.similarity.gallery_ids])
    q_clusters = np.array([clusters[v] for v in q_vids])
    g_clusters = np.array([clusters[v] for v in g_vids])
    values = output.similarity.values

    same_id = q_vids[:, None] == g_vids[None, :]
    same_cluster = (q_clusters[:, None] == g_clusters[None, :]) & ~same_id
    cross = ~same_id & ~same_cluster

    def mean_of(mask):
        return float(values[mask].mean()) if mask.any() else None

    confusions = None
    if values.size:
        top = values.argmax(axis=1)
        rows = np.arange(values.shape[0])
        confusions = float(same_cluster[rows, top].mean())

    return AmbiguityReport(
        within_id_mean=mean_of(same_id),
        within_cluster_mean=mean_of(same_cluster),
        cross_cluster_mean=mean_of(cross),
        top1_same_cluster_confusions=confusions,
        n_within_id=int(same_id.sum()),
        n_within_cluster=int(same_cluster.sum()),
        n_cross_cluster=int(cross.sum()),
        degenerate=not same_cluster.any(),
    )
