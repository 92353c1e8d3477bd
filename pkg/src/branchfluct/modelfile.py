"""Model spec files: JSON with fields mirroring the model types.

Layout::

    {
      "types": {"d": 2, "labels": ["a", "b"]},
      "q": [[...], [...]],
      "gamma": [...],
      "offspring": [[{"probability": p, "children": [...]}, ...], ...],
      "eigen": { ... }          # optional declared eigen-structure
    }

Vector entries inside the ``eigen`` block are numbers or [re, im] pairs.
Unknown fields are rejected with their path; JSON syntax errors carry line
numbers.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ModelFileError
from .model import BranchingModel, MotionGenerator, OffspringLaw, Outcome, TypeSpace
from .spectral import make_eigenstructure

_TOP_FIELDS = {"types", "q", "gamma", "offspring", "eigen"}
_TYPE_FIELDS = {"d", "labels"}
_OUTCOME_FIELDS = {"probability", "children"}
_EIGEN_FIELDS = {"eigenvalues", "chains", "duals", "chain_links"}
_LINK_FIELDS = {"i", "j", "k", "k_star"}


def _reject_unknown(obj, allowed, path):
    unknown = set(obj) - allowed
    if unknown:
        raise ModelFileError(
            f"unknown field(s) {sorted(unknown)}", field_path=path
        )


def _need(obj, key, path):
    if key not in obj:
        raise ModelFileError("missing required field", field_path=f"{path}.{key}")
    return obj[key]


def _scalar(entry, path):
    if isinstance(entry, (int, float)):
        return complex(entry)
    if isinstance(entry, list) and len(entry) == 2:
        return complex(entry[0], entry[1])
    raise ModelFileError(
        "vector entries must be numbers or [re, im] pairs", field_path=path
    )


def _vector(entries, path):
    if not isinstance(entries, list):
        raise ModelFileError("expected a vector (list)", field_path=path)
    return np.array([_scalar(e, f"{path}[{i}]") for i, e in enumerate(entries)])


def parse_model(doc, path="model"):
    """Build (model, declared eigen-structure or None) from a parsed document."""
    if not isinstance(doc, dict):
        raise ModelFileError("top level must be an object", field_path=path)
    _reject_unknown(doc, _TOP_FIELDS, path)
    tdoc = _need(doc, "types", path)
    if not isinstance(tdoc, dict):
        raise ModelFileError("types must be an object", field_path=f"{path}.types")
    _reject_unknown(tdoc, _TYPE_FIELDS, f"{path}.types")
    labels = _need(tdoc, "labels", f"{path}.types")
    d = int(tdoc.get("d", len(labels)))
    if d != len(labels):
        raise ModelFileError(
            f"d={d} does not match {len(labels)} labels",
            field_path=f"{path}.types.d",
        )
    q = np.asarray(_need(doc, "q", path), dtype=float)
    gamma = np.asarray(_need(doc, "gamma", path), dtype=float)
    odoc = _need(doc, "offspring", path)
    if not isinstance(odoc, list) or len(odoc) != d:
        raise ModelFileError(
            f"offspring must list outcomes for each of the {d} types",
            field_path=f"{path}.offspring",
        )
    outs = []
    for x, per_type in enumerate(odoc):
        if not isinstance(per_type, list):
            raise ModelFileError(
                "expected a list of outcomes", field_path=f"{path}.offspring[{x}]"
            )
        rows = []
        for i, o in enumerate(per_type):
            opath = f"{path}.offspring[{x}][{i}]"
            if not isinstance(o, dict):
                raise ModelFileError("expected an outcome object", field_path=opath)
            _reject_unknown(o, _OUTCOME_FIELDS, opath)
            rows.append(
                Outcome(
                    float(_need(o, "probability", opath)),
                    np.asarray(_need(o, "children", opath), dtype=np.int64),
                )
            )
        outs.append(tuple(rows))
    try:
        model = BranchingModel(
            types=TypeSpace(tuple(labels)),
            motion=MotionGenerator(q),
            gamma=gamma,
            offspring=OffspringLaw(tuple(outs)),
        )
    except Exception as exc:  # structural errors get the file path prefix
        raise ModelFileError(str(exc), field_path=path) from exc
    declared = None
    if "eigen" in doc:
        declared = _parse_eigen(doc["eigen"], f"{path}.eigen")
    return model, declared


def _parse_eigen(edoc, path):
    if not isinstance(edoc, dict):
        raise ModelFileError("eigen must be an object", field_path=path)
    _reject_unknown(edoc, _EIGEN_FIELDS, path)
    lams = [
        _scalar(e, f"{path}.eigenvalues[{i}]")
        for i, e in enumerate(_need(edoc, "eigenvalues", path))
    ]
    chains = _need(edoc, "chains", path)
    duals = _need(edoc, "duals", path)

    def nest(block, name):
        out = []
        for i, per_eig in enumerate(block):
            ranks = []
            for j, rank in enumerate(per_eig):
                ranks.append(
                    [
                        _vector(v, f"{path}.{name}[{i}][{j}][{k}]")
                        for k, v in enumerate(rank)
                    ]
                )
            out.append(ranks)
        return out

    links = {}
    for i, entry in enumerate(edoc.get("chain_links", [])):
        lpath = f"{path}.chain_links[{i}]"
        if not isinstance(entry, dict):
            raise ModelFileError("expected a link object", field_path=lpath)
        _reject_unknown(entry, _LINK_FIELDS, lpath)
        links[
            (
                int(_need(entry, "i", lpath)) - 1,
                int(_need(entry, "j", lpath)) - 1,
                int(_need(entry, "k", lpath)) - 1,
            )
        ] = int(_need(entry, "k_star", lpath)) - 1
    try:
        return make_eigenstructure(
            eigenvalues=lams,
            phi=nest(chains, "chains"),
            duals=nest(duals, "duals"),
            chain_links=links,
        )
    except Exception as exc:
        raise ModelFileError(str(exc), field_path=path) from exc


def load_model_file(path):
    """(model, declared eigen-structure or None) from a JSON spec file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ModelFileError(f"model file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ModelFileError(
            f"invalid JSON: {exc.msg}", line=exc.lineno
        ) from exc
    return parse_model(doc, path=str(path))


def _num(z):
    z = complex(z)
    if z.imag == 0:
        return z.real
    return [z.real, z.imag]


def model_document(model, es=None):
    """Serialisable document for a model (optionally with its eigen block)."""
    doc = {
        "types": {"d": model.d, "labels": list(model.types.labels)},
        "q": model.motion.q.tolist(),
        "gamma": model.gamma.tolist(),
        "offspring": [
            [
                {
                    "probability": o.probability,
                    "children": o.children.tolist(),
                }
                for o in outs
            ]
            for outs in model.offspring.outcomes
        ],
    }
    if es is not None:
        doc["eigen"] = {
            "eigenvalues": [[l.real, l.imag] for l in es.eigenvalues],
            "chains": [
                [
                    [[_num(z) for z in vec] for vec in es.phi[i][j]]
                    for j in range(es.p(i))
                ]
                for i in range(es.m)
            ],
            "duals": [
                [
                    [[_num(z) for z in vec] for vec in es.duals[i][j]]
                    for j in range(es.p(i))
                ]
                for i in range(es.m)
            ],
            "chain_links": [
                {"i": i + 1, "j": j + 1, "k": k + 1, "k_star": ks + 1}
                for (i, j, k), ks in sorted(es.chain_links.items())
            ],
        }
    return doc


def save_model_file(path, model, es=None):
    with open(path, "w") as fh:
        json.dump(model_document(model, es), fh, indent=1, sort_keys=True)
        fh.write("\n")
