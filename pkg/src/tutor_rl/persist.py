"""On-disk formats: datasets as JSONL, models as versioned containers.

Every artifact embeds the fingerprint of the configuration that
produced it plus the tool version, and loading verifies integrity, so
artifacts from different configurations cannot be mixed silently.
Writes are atomic (temp file + rename).  Serialisation is byte-stable:
writing the same in-memory object twice produces identical files.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import pickle
from dataclasses import asdict
from typing import Optional

from ._version import __version__
from .core import Dataset, Episode, LatentState, Transition
from .errors import FingerprintMismatchError, ValidationError

FORMAT_VERSION = 1


def fingerprint_of(payload: dict) -> str:
    """SHA-256 over the canonical JSON form of a configuration payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def atomic_write_bytes(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _require_absent(path: str, force: bool) -> None:
    if os.path.exists(path) and not force:
        raise ValidationError(f"{path} exists; pass force=True (or --force) to overwrite")


# ---------------------------------------------------------------------------
# Datasets


def episode_to_obj(ep: Episode) -> dict:
    return {
        "seed": ep.seed,
        "problem_id": ep.problem_id,
        "provenance": ep.provenance,
        "transitions": [
            {
                "s": list(t.state.values),
                "a": int(t.action),
                "r": t.reward,
                "terminal": t.terminal,
            }
            for t in ep.transitions
        ],
    }


def obj_to_episode(obj: dict) -> Episode:
    rows = obj["transitions"]
    states = [LatentState(tuple(r["s"])) for r in rows]
    transitions = []
    for i, r in enumerate(rows):
        terminal = bool(r["terminal"])
        transitions.append(
            Transition(
                state=states[i],
                action=r["a"],
                reward=r["r"],
                next_state=states[i + 1] if not terminal else None,
                terminal=terminal,
            )
        )
    return Episode(
        transitions=tuple(transitions),
        success=transitions[-1].reward == 1,
        problem_id=obj["problem_id"],
        provenance=obj["provenance"],
        seed=obj["seed"],
    )


def dataset_to_bytes(dataset: Dataset) -> bytes:
    lines = [
        json.dumps(episode_to_obj(ep), separators=(",", ":")) for ep in dataset.episodes
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def dataset_digest(dataset: Dataset) -> str:
    """Content hash of the serialised dataset."""
    return hashlib.sha256(dataset_to_bytes(dataset)).hexdigest()


def _meta_path(path: str) -> str:
    return f"{path}.meta.json"


def save_dataset(dataset: Dataset, path: str, force: bool = False) -> None:
    _require_absent(path, force)
    data = dataset_to_bytes(dataset)
    meta = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "config_fingerprint": dataset.config_fingerprint,
        "n_episodes": len(dataset.episodes),
        "n_transitions": sum(len(e.transitions) for e in dataset.episodes),
        "content_sha256": hashlib.sha256(data).hexdigest(),
    }
    atomic_write_bytes(path, data)
    atomic_write_bytes(
        _meta_path(path),
        (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode("utf-8"),
    )


def load_dataset(path: str, verify: bool = True) -> Dataset:
    meta_path = _meta_path(path)
    if not os.path.exists(meta_path):
        raise ValidationError(f"missing sidecar metadata {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(path, "rb") as fh:
        data = fh.read()
    if verify:
        digest = hashlib.sha256(data).hexdigest()
        if digest != meta.get("content_sha256"):
            raise FingerprintMismatchError(
                f"{path} content does not match its sidecar digest"
            )
    episodes = []
    for line in data.decode("utf-8").splitlines():
        if line.strip():
            episodes.append(obj_to_episode(json.loads(line)))
    return Dataset(
        episodes=tuple(episodes), config_fingerprint=meta["config_fingerprint"]
    )


# ---------------------------------------------------------------------------
# Models

_WEIGHT_DTYPE = "<f4"


def _weights_payload(net) -> dict:
    import numpy as np

    names = []
    shapes = []
    chunks = []
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype(_WEIGHT_DTYPE)
        names.append(name)
        shapes.append(list(arr.shape))
        chunks.append(arr.tobytes())
    return {
        "names": names,
        "shapes": shapes,
        "dtype": _WEIGHT_DTYPE,
        "blob_b64": base64.b64encode(b"".join(chunks)).decode("ascii"),
    }


def _load_weights(net, payload: dict) -> None:
    import numpy as np
    import torch

    blob = base64.b64decode(payload["blob_b64"])
    offset = 0
    state = {}
    for name, shape in zip(payload["names"], payload["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=payload["dtype"])
        state[name] = torch.from_numpy(arr.reshape(shape).copy())
        offset += nbytes
    net.load_state_dict(state)
    net.eval()


def _container_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _save_container(doc: dict, path: str, force: bool) -> None:
    _require_absent(path, force)
    doc = dict(doc)
    doc["format_version"] = FORMAT_VERSION
    doc["tool_version"] = __version__
    atomic_write_bytes(path, _container_bytes(doc))


def _load_container(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported format version {doc.get('format_version')!r}"
        )
    return doc


def _key_to_jsonable(key) -> list:
    return list(key)


def _jsonable_to_state_key(row) -> tuple:
    return tuple(row)


def save_policy(policy, path: str, force: bool = False) -> None:
    from .policies import ClassifierPolicy, TablePolicy

    if isinstance(policy, TablePolicy):
        entries = sorted(
            ([_key_to_jsonable(k), list(v)] for k, v in policy.counts.items()),
            key=lambda e: json.dumps(e[0]),
        )
        doc = {
            "kind": "bc_table",
            "dataset_fingerprint": policy.dataset_fingerprint,
            "payload": {"counts": entries, "global_counts": list(policy.global_counts)},
        }
    elif isinstance(policy, ClassifierPolicy):
        doc = {
            "kind": "bc_classifier",
            "dataset_fingerprint": policy.dataset_fingerprint,
            "config": asdict(policy.config),
            "payload": _weights_payload(policy.net),
        }
    else:
        raise ValidationError(f"cannot serialise policy of type {type(policy).__name__}")
    _save_container(doc, path, force)


def load_policy(path: str):
    from .policies import (
        BcClassifierConfig,
        ClassifierPolicy,
        TablePolicy,
        _make_mlp,
    )
    from .core import N_ACTIONS, N_FEATURES

    doc = _load_container(path)
    kind = doc.get("kind")
    if kind == "bc_table":
        counts = {
            _jsonable_to_state_key(k): list(v) for k, v in doc["payload"]["counts"]
        }
        return TablePolicy(
            counts, doc["payload"]["global_counts"], doc.get("dataset_fingerprint")
        )
    if kind == "bc_classifier":
        cfg_raw = dict(doc["config"])
        cfg_raw["hidden"] = tuple(cfg_raw["hidden"])
        cfg = BcClassifierConfig(**cfg_raw)
        net = _make_mlp(N_FEATURES, cfg.hidden, N_ACTIONS)
        _load_weights(net, doc["payload"])
        return ClassifierPolicy(net, cfg, doc.get("dataset_fingerprint"))
    raise ValidationError(f"{path}: unknown policy kind {kind!r}")


def save_qfunction(q, path: str, force: bool = False) -> None:
    from .offline_rl import NeuralQ, TabularQ, TreeEnsembleQ

    if isinstance(q, TabularQ):
        entries = sorted(
            ([_key_to_jsonable(k[0]), k[1], v] for k, v in q.table.items()),
            key=lambda e: (json.dumps(e[0]), e[1]),
        )
        doc = {
            "kind": "q_tabular",
            "gamma": q.gamma,
            "dataset_fingerprint": q.dataset_fingerprint,
            "payload": {"entries": entries},
        }
    elif isinstance(q, TreeEnsembleQ):
        doc = {
            "kind": "q_tree_ensemble",
            "gamma": q.gamma,
            "dataset_fingerprint": q.dataset_fingerprint,
            "config": asdict(q.config),
            "payload": {
                "pickle_b64": base64.b64encode(
                    pickle.dumps(q.model, protocol=4)
                ).decode("ascii")
            },
        }
    elif isinstance(q, NeuralQ):
        doc = {
            "kind": "q_neural",
            "gamma": q.gamma,
            "dataset_fingerprint": q.dataset_fingerprint,
            "config": asdict(q.config),
            "payload": _weights_payload(q.net),
        }
    else:
        raise ValidationError(f"cannot serialise Q function of type {type(q).__name__}")
    _save_container(doc, path, force)


def load_qfunction(path: str):
    from .core import N_ACTIONS, N_FEATURES
    from .offline_rl import CqlConfig, FqiConfig, NeuralQ, TabularQ, TreeEnsembleQ
    from .policies import _make_mlp

    doc = _load_container(path)
    kind = doc.get("kind")
    fp = doc.get("dataset_fingerprint")
    if kind == "q_tabular":
        table = {
            (_jsonable_to_state_key(state), int(action)): float(value)
            for state, action, value in doc["payload"]["entries"]
        }
        return TabularQ(table, doc["gamma"], fp)
    if kind == "q_tree_ensemble":
        cfg = FqiConfig(**doc["config"])
        model = pickle.loads(base64.b64decode(doc["payload"]["pickle_b64"]))
        return TreeEnsembleQ(model, doc["gamma"], cfg, fp)
    if kind == "q_neural":
        cfg_raw = dict(doc["config"])
        cfg_raw["hidden"] = tuple(cfg_raw["hidden"])
        cfg = CqlConfig(**cfg_raw)
        net = _make_mlp(N_FEATURES, cfg.hidden, N_ACTIONS)
        _load_weights(net, doc["payload"])
        return NeuralQ(net, doc["gamma"], cfg, fp)
    raise ValidationError(f"{path}: unknown Q function kind {kind!r}")


def check_fingerprints_match(expected: Optional[str], actual: Optional[str], what: str) -> None:
    """Refuse to mix artifacts from different configurations."""
    if expected is None or actual is None:
        return
    if expected != actual:
        raise FingerprintMismatchError(
            f"{what}: fingerprint {actual[:12]}... does not match expected {expected[:12]}..."
        )
