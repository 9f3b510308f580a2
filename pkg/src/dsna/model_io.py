"""Versioned, checksummed model container.

Layout: an 8-byte magic, a little-endian uint32 header length, a JSON header
(format version, task, dimensions, payload length and SHA-256), then the JSON
payload holding the scaler, configs, trees, and the full training set (the
sparse neighbor predictor is instance-based, so leaves index into it).
Floats survive the JSON round trip bit-exactly, which makes reloaded models
reproduce predictions identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Dataset, DsnaConfig, ForestConfig, Scaler
from .forest import (
    TREE_FORMAT_VERSION,
    CostSensitiveForest,
    DecisionTree,
    InternalNode,
    LeafNode,
)
from .solvers import LinearModel

MAGIC = b"DSNAMDL\n"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


class ModelFormatError(ValueError):
    """The file is not a readable model."""


class ModelVersionError(ModelFormatError):
    """The file declares an unsupported format version."""


class ModelIntegrityError(ModelFormatError):
    """The file is truncated or its checksum does not match."""


@dataclass(frozen=True, eq=False)
class ModelFile:
    format_version: int
    label_name: Optional[str]
    forest: CostSensitiveForest
    dsna_config: DsnaConfig


def _node_to_dict(node):
    if isinstance(node, LeafNode):
        return {"leaf": node.sample_indices.tolist()}
    return {
        "features": node.feature_subset.tolist(),
        "w": node.model.weights.tolist(),
        "b": node.model.bias,
        "t": node.threshold,
        "l": _node_to_dict(node.left),
        "r": _node_to_dict(node.right),
    }


def _node_from_dict(d):
    if "leaf" in d:
        return LeafNode(sample_indices=np.asarray(d["leaf"], dtype=np.int64))
    return InternalNode(
        feature_subset=np.asarray(d["features"], dtype=np.int64),
        model=LinearModel(weights=np.asarray(d["w"], dtype=np.float64), bias=float(d["b"])),
        threshold=float(d["t"]),
        left=_node_from_dict(d["l"]),
        right=_node_from_dict(d["r"]),
    )


def save_model(model: ModelFile, path):
    forest = model.forest
    payload_obj = {
        "tree_format_version": TREE_FORMAT_VERSION,
        "task": forest.task,
        "label_name": model.label_name,
        "forest_config": asdict(forest.config),
        "dsna_config": asdict(model.dsna_config),
        "scaler": {"mean": forest.scaler.mean.tolist(), "scale": forest.scaler.scale.tolist()},
        "train_features": forest.train_features.tolist(),
        "train_labels": forest.train_labels.tolist(),
        "trees": [
            {
                "bootstrap": tree.bootstrap_indices.tolist(),
                "dimension": tree.dimension,
                "root": _node_to_dict(tree.root),
            }
            for tree in forest.trees
        ],
    }
    payload = json.dumps(payload_obj, separators=(",", ":")).encode("utf-8")
    header = json.dumps(
        {
            "format": "dsna-model",
            "format_version": model.format_version,
            "task": forest.task,
            "dimension": forest.dimension,
            "n_train": int(forest.train_features.shape[0]),
            "payload_bytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        },
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(payload)


def load_model(path) -> ModelFile:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    pos = len(MAGIC)
    header_len = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4
    if len(data) < pos + header_len:
        raise ModelIntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header: {exc}") from None
    version = header.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise ModelVersionError(
            f"{path}: format_version {version} not supported "
            f"(supported versions: {list(SUPPORTED_VERSIONS)})"
        )
    payload = data[pos + header_len :]
    if len(payload) != header["payload_bytes"]:
        raise ModelIntegrityError(
            f"{path}: payload length {len(payload)} != declared {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ModelIntegrityError(f"{path}: payload checksum mismatch")
    obj = json.loads(payload.decode("utf-8"))
    if obj.get("tree_format_version") != TREE_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: tree format {obj.get('tree_format_version')} not supported"
        )

    task = obj["task"]
    dsna_cfg = obj["dsna_config"]
    if isinstance(dsna_cfg.get("neighbor_radius"), (int, float)):
        dsna_cfg["neighbor_radius"] = float(dsna_cfg["neighbor_radius"])
    labels_dtype = np.int64 if task == "classification" else np.float64
    forest = CostSensitiveForest(
        trees=tuple(
            DecisionTree(
                root=_node_from_dict(t["root"]),
                bootstrap_indices=np.asarray(t["bootstrap"], dtype=np.int64),
                dimension=int(t["dimension"]),
            )
            for t in obj["trees"]
        ),
        task=task,
        config=ForestConfig(**obj["forest_config"]),
        scaler=Scaler(
            mean=np.asarray(obj["scaler"]["mean"], dtype=np.float64),
            scale=np.asarray(obj["scaler"]["scale"], dtype=np.float64),
        ),
        train_features=np.asarray(obj["train_features"], dtype=np.float64),
        train_labels=np.asarray(obj["train_labels"], dtype=labels_dtype),
    )
    return ModelFile(
        format_version=int(version),
        label_name=obj.get("label_name"),
        forest=forest,
        dsna_config=DsnaConfig(**dsna_cfg),
    )
