"""
Map and snapshot serialization

Maps serialize to {"mode", "entities", "mean", "cov"} with the covariance
as row-major nested lists. Snapshot streams are JSON Lines written with
orjson, whose shortest round-trip float formatting makes a write/read
cycle bit-exact.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import orjson

from .data_models import Convention, EntityId, EntityKind
from .exceptions import InvalidValue, ShapeMismatch
from .stochastic_map import StochasticMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

JSON_OPTIONS = orjson.OPT_SERIALIZE_NUMPY


def map_to_dict(m: StochasticMap) -> Dict[str, Any]:
    return {
        "mode": m.mode,
        "entities": [
            {
                "key": e.key,
                "name": e.name,
                "kind": e.kind.value,
                "convention": e.convention.value if e.convention else None,
                "offset": m.index(e).start,
            }
            for e in m.entities
        ],
        "mean": m.mean.tolist(),
        "cov": m.cov.tolist(),
    }


def map_from_dict(data: Dict[str, Any]) -> StochasticMap:
    """
    Rebuild a map from its serialized form.

    Raises:
        InvalidValue: If the entity layout is inconsistent
        ShapeMismatch: If the mean and covariance do not match the entities
    """
    m = StochasticMap(data["mode"])
    offset = 0
    for position, item in enumerate(data["entities"]):
        kind = EntityKind(item["kind"])
        if item["key"] != position or item.get("offset", offset) != offset:
            raise InvalidValue(f"Entity {item['name']!r} is out of order in the serialized map")
        convention = Convention(item["convention"]) if item.get("convention") else None
        entity = EntityId(key=position, kind=kind, name=item["name"], convention=convention)
        m.entities.append(entity)
        m._offsets[entity.key] = offset
        offset += kind.dim
    mean = np.asarray(data["mean"], dtype=float).reshape(-1)
    cov = np.asarray(data["cov"], dtype=float).reshape(mean.size, mean.size) if mean.size else np.zeros((0, 0))
    if mean.size != offset:
        raise ShapeMismatch(f"Serialized state has {mean.size} values, entities need {offset}")
    m.mean = mean
    m.cov = cov
    return m


def dumps(document: Dict[str, Any]) -> bytes:
    return orjson.dumps(document, option=JSON_OPTIONS)


def write_json_lines(path: PathLike, documents: Iterable[Dict[str, Any]]) -> None:
    """
    Write one JSON document per line, atomically.

    The stream goes to a temporary file in the destination directory that
    replaces the target only once every document was written.
    """
    target = Path(path)
    directory = target.parent if str(target.parent) else Path(".")
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            for document in documents:
                fh.write(dumps(document))
                fh.write(b"\n")
        os.replace(temp_name, target)
    except BaseException:
        try:
            os.unlink(temp_name)
        except OSError:
            pass
        raise
    logger.debug(f"Wrote {target}")


def read_json_lines(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, "rb") as fh:
        return [orjson.loads(line) for line in fh if line.strip()]
