"""On-disk formats: observation CSV, similarity CSV/binary, model JSON.

Every format round-trips exactly: binary payloads bit for bit, JSON and CSV
doubles via shortest round-trip decimal representation. Loaders reject
inconsistent input rather than repairing it.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .evaluation import SimilarityMatrix
from .fusion import FusionModel, TrainConfig
from .observations import Observation
from .topology import HistogramGeometry, TopologyModel

OBSERVATION_HEADER = ["image_id", "vehicle_id", "camera_id", "frame"]
SIMILARITY_MAGIC = b"STSM"


@dataclass
class Dataset:
    """Observations plus an optional similarity matrix over a query/gallery split."""

    train_observations: list[Observation]
    query_observations: list[Observation]
    gallery_observations: list[Observation]
    similarity: SimilarityMatrix | None = None

    @classmethod
    def assemble(
        cls, observations: list[Observation], similarity: SimilarityMatrix
    ) -> "Dataset":
        """Split observations into query/gallery rows named by the matrix.

        Every id the matrix references must resolve to exactly one
        observation; the full observation list is kept as training data
        for topology estimation.
        """
        by_id: dict[str, Observation] = {}
        for obs in observations:
            if obs.image_id in by_id:
                raise InputError(f"duplicate image_id {obs.image_id!r}")
            by_id[obs.image_id] = obs
        missing = [
            i
            for i in list(similarity.query_ids) + list(similarity.gallery_ids)
            if i not in by_id
        ]
        if missing:
            shown = ", ".join(repr(m) for m in missing[:10])
            raise InputError(
                f"{len(missing)} similarity ids have no observation: {shown}"
            )
        return cls(
            train_observations=list(observations),
            query_observations=[by_id[i] for i in similarity.query_ids],
            gallery_observations=[by_id[i] for i in similarity.gallery_ids],
            similarity=similarity,
        )


# --- observations ------------------------------------------------------------


def load_observations(path) -> list[Observation]:
    """Parse an observation CSV, reporting malformed rows by line number."""
    observations: list[Observation] = []
    seen: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != OBSERVATION_HEADER:
            raise FormatError(
                f"{path}: expected header {','.join(OBSERVATION_HEADER)}, got "
                f"{','.join(header) if header else '<empty file>'}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            image_id, vehicle_id, camera_raw, frame_raw = row
            try:
                camera_id = int(camera_raw)
                frame = int(frame_raw)
            except ValueError:
                raise FormatError(
                    f"{path}: line {line}: camera_id and frame must be decimal "
                    f"integers, got {camera_raw!r}, {frame_raw!r}"
                ) from None
            if image_id in seen:
                raise FormatError(
                    f"{path}: line {line}: duplicate image_id {image_id!r} "
                    f"(first seen on line {seen[image_id]})"
                )
            seen[image_id] = line
            try:
                observations.append(Observation(image_id, vehicle_id, camera_id, frame))
            except InputError as exc:
                raise FormatError(f"{path}: line {line}: {exc}") from None
    return observations


def save_observations(observations: list[Observation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_HEADER)
        for obs in observations:
            writer.writerow([obs.image_id, obs.vehicle_id, obs.camera_id, obs.frame])


# --- similarity matrices ------------------------------------------------------


def save_similarity(matrix: SimilarityMatrix, path, binary: bool = False) -> None:
    """Write a similarity matrix as CSV, or as the STSM binary container.

    The binary layout is magic bytes, Q and G as unsigned 64-bit
    little-endian, then row-major float64 values; ids go to a JSON sidecar
    at `<path>.ids.json` since the container itself carries none.
    """
    if binary:
        with open(path, "wb") as fh:
            fh.write(SIMILARITY_MAGIC)
            fh.write(struct.pack("<QQ", len(matrix.query_ids), len(matrix.gallery_ids)))
            fh.write(np.ascontiguousarray(matrix.values, dtype="<f8").tobytes())
        with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
            json.dump(
                {"query_ids": matrix.query_ids, "gallery_ids": matrix.gallery_ids}, fh
            )
        return

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id"] + list(matrix.gallery_ids))
        for qid, row in zip(matrix.query_ids, matrix.values):
            writer.writerow([qid] + [repr(float(v)) for v in row])


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".ids.json")


def load_similarity(path, query_ids=None, gallery_ids=None) -> SimilarityMatrix:
    """Load a similarity matrix, sniffing CSV vs STSM binary by magic bytes.

    For binary files the ids come from explicit arguments or the saver's
    sidecar; a binary file with neither is rejected rather than given
    invented ids.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == SIMILARITY_MAGIC:
        return _load_similarity_binary(path, query_ids, gallery_ids)
    return _load_similarity_csv(path)


def _load_similarity_binary(path, query_ids, gallery_ids) -> SimilarityMatrix:
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise FormatError(f"{path}: truncated binary similarity file")
    q, g = struct.unpack("<QQ", data[4:20])
    expected = 20 + q * g * 8
    if len(data) < expected:
        raise FormatError(
            f"{path}: truncated binary similarity file: expected {expected} bytes "
            f"for {q}x{g}, got {len(data)}"
        )
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after payload")
    values = np.frombuffer(data[20:], dtype="<f8").reshape(q, g).copy()

    if query_ids is None or gallery_ids is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise FormatError(
                f"{path}: binary similarity carries no ids; pass query_ids/"
                f"gallery_ids or provide the sidecar {sidecar.name}"
            )
        doc = json.loads(sidecar.read_text(encoding="utf-8"))
        query_ids = query_ids if query_ids is not None else doc.get("query_ids")
        gallery_ids = gallery_ids if gallery_ids is not None else doc.get("gallery_ids")
    if len(query_ids) != q or len(gallery_ids) != g:
        raise FormatError(
            f"{path}: id lists ({len(query_ids)}, {len(gallery_ids)}) do not match "
            f"stored dimensions ({q}, {g})"
        )
    return SimilarityMatrix(list(query_ids), list(gallery_ids), values)


def _load_similarity_csv(path) -> SimilarityMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "query_id":
            raise FormatError(f"{path}: first header field must be 'query_id'")
        gallery_ids = header[1:]
        if len(set(gallery_ids)) != len(gallery_ids):
            raise FormatError(f"{path}: duplicate gallery ids in header")
        query_ids: list[str] = []
        rows: list[list[float]] = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(gallery_ids) + 1:
                raise FormatError(
                    f"{path}: line {line}: expected {len(gallery_ids) + 1} fields, "
                    f"got {len(row)}"
                )
            if row[0] in query_ids:
                raise FormatError(f"{path}: line {line}: duplicate query id {row[0]!r}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError(f"{path}: line {line}: non-numeric similarity value") from None
            query_ids.append(row[0])
    values = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(gallery_ids)))
    try:
        return SimilarityMatrix(query_ids, gallery_ids, values)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None


# --- topology models ----------------------------------------------------------


def save_topology(model: TopologyModel, path) -> None:
    doc = {
        "n_cameras": model.n_cameras,
        "bin_count": model.geometry.bin_count,
        "bin_width": model.geometry.bin_width,
        "alpha": model.alpha,
        "beta": model.beta,
        "entries": [
            {
                "from": i,
                "to": j,
                "sigma": float(model.sigmas[i, j]),
                "pair_count": int(model.pair_counts[i, j]),
                "pdf": [float(v) for v in model.pdfs[i, j]],
            }
            for i in range(model.n_cameras)
            for j in range(model.n_cameras)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_topology(path) -> TopologyModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        n = int(doc["n_cameras"])
        geometry = HistogramGeometry(int(doc["bin_count"]), int(doc["bin_width"]))
        alpha = float(doc["alpha"])
        beta = float(doc["beta"])
        entries = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid topology document: {exc}") from exc
    if len(entries) != n * n:
        raise FormatError(
            f"{path}: expected {n * n} entries for {n} cameras, got {len(entries)}"
        )
    pdfs = np.empty((n, n, geometry.bin_count), dtype=np.float64)
    sigmas = np.empty((n, n), dtype=np.float64)
    pair_counts = np.empty((n, n), dtype=np.int64)
    filled = np.zeros((n, n), dtype=bool)
    for entry in entries:
        try:
            i, j = int(entry["from"]), int(entry["to"])
            pdf = entry["pdf"]
            sigma = float(entry["sigma"])
            count = int(entry["pair_count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: invalid topology entry: {exc}") from exc
        if not (0 <= i < n and 0 <= j < n):
            raise FormatError(f"{path}: entry ({i}, {j}) out of range for {n} cameras")
        if filled[i, j]:
            raise FormatError(f"{path}: duplicate entry for pair ({i}, {j})")
        if len(pdf) != geometry.bin_count:
            raise FormatError(
                f"{path}: entry ({i}, {j}) pdf has {len(pdf)} bins, expected "
                f"{geometry.bin_count}"
            )
        pdfs[i, j] = pdf
        sigmas[i, j] = sigma
        pair_counts[i, j] = count
        filled[i, j] = True
    return TopologyModel(n, geometry, alpha, beta, pdfs, sigmas, pair_counts)


# --- fusion models -------------------------------------------------------------


def save_fusion_model(model: FusionModel, path) -> None:
    config = model.train_config
    doc = {
        "window": model.window,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "w1": [float(v) for v in model.w1.reshape(-1)],
        "b1": [float(v) for v in model.b1],
        "w2": [float(v) for v in model.w2],
        "b2": float(model.b2),
        "train_config": None
        if config is None
        else {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "beta1": config.beta1,
            "beta2": config.beta2,
            "eps": config.eps,
            "seed": config.seed,
            "negative_ratio": config.negative_ratio,
        },
        "final_loss": model.final_loss,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_fusion_model(path) -> FusionModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        window = int(doc["window"])
        input_dim = int(doc["input_dim"])
        hidden_dim = int(doc["hidden_dim"])
        w1 = np.array(doc["w1"], dtype=np.float64)
        b1 = np.array(doc["b1"], dtype=np.float64)
        w2 = np.array(doc["w2"], dtype=np.float64)
        b2 = float(doc["b2"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid fusion model document: {exc}") from exc
    if input_dim != 2 * window + 2:
        raise FormatError(
            f"{path}: input_dim {input_dim} inconsistent with window {window}"
        )
    if w1.shape != (hidden_dim * input_dim,):
        raise FormatError(
            f"{path}: w1 has {w1.shape[0]} values, expected "
            f"{hidden_dim}x{input_dim} row-major"
        )
    config = None
    if doc.get("train_config") is not None:
        tc = doc["train_config"]
        try:
            config = TrainConfig(
                epochs=int(tc["epochs"]),
                batch_size=int(tc["batch_size"]),
                learning_rate=float(tc["learning_rate"]),
                beta1=float(tc["beta1"]),
                beta2=float(tc["beta2"]),
                eps=float(tc["eps"]),
                seed=int(tc["seed"]),
                negative_ratio=int(tc["negative_ratio"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: invalid train_config: {exc}") from exc
    try:
        return FusionModel(
            window,
            w1.reshape(hidden_dim, input_dim),
            b1,
            w2,
            b2,
            train_config=config,
            final_loss=doc.get("final_loss"),
        )
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None
