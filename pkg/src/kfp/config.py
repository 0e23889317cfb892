"""Operator and run configuration files (TOML or JSON).

An operator file holds the block structure and the coefficient path::

    q = 1
    m = [1]
    blocks = [[[1.0]]]

    [coefficients]
    kind = "constant_alpha"        # constant_matrix | piecewise_constant | closed_form
    alpha = 1.0

``constant_matrix`` takes ``matrix``; ``piecewise_constant`` takes
``breakpoints`` and ``matrices``; ``closed_form`` takes ``expressions`` (a
q x q table of expressions in ``t``) and ``nu``.  Subcommand settings live in
optional tables ``[gamma]``, ``[solve]``, ``[singular]``, ``[estimate]`` and
``[tolerances]``, plus a top-level ``seed``.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigParse, IOFailure, SpecInvalid, ValidationError
from .expr import Expression
from .fundamental import CoefficientPath, FundamentalSolution
from .geometry import BlockStructure, Group

OPERATOR_KEYS = ("q", "m", "blocks", "coefficients")


def load_config(path):
    """Parse a TOML or JSON file into a dict (ConfigParse on empty or malformed input)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc.strerror}") from exc
    if not text.strip():
        raise ConfigParse(f"{path} is empty")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigParse(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict) or not data:
        raise ConfigParse(f"{path} holds no settings")
    base = data.pop("operator_file", None)
    if base is not None:
        parent = load_config(path.parent / base)
        parent.update(data)
        data = parent
    return data


def operator_dict(cfg):
    """The operator part of a configuration (what the spec hash covers)."""
    if "q" not in cfg:
        raise SpecInvalid("operator spec needs at least the key 'q'")
    return {k: cfg[k] for k in OPERATOR_KEYS if k in cfg}


def spec_hash(cfg):
    blob = json.dumps(operator_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def structure_from_config(cfg):
    op = operator_dict(cfg)
    try:
        return BlockStructure(q=int(op["q"]), m=tuple(op.get("m", ())), blocks=tuple(op.get("blocks", ())))
    except (TypeError, ValueError) as exc:
        raise SpecInvalid(f"bad block structure: {exc}") from exc


def _closed_form_path(spec, q):
    table = spec.get("expressions")
    if table is None or len(table) != q or any(len(row) != q for row in table):
        raise SpecInvalid(f"closed_form coefficients need a {q} x {q} table of expressions")
    if "nu" not in spec:
        raise SpecInvalid("closed_form coefficients need nu")
    exprs = [[Expression(str(e), 1) for e in row] for row in table]
    if any(str(v) != "t" for row in exprs for e in row for v in e.sym.free_symbols):
        raise SpecInvalid("path coefficients may depend on t only")

    def func(t):
        t = np.asarray(t, dtype=float)
        x = np.zeros(t.shape + (1,))
        return np.stack([np.stack([e(x, t) for e in row], -1) for row in exprs], -2)

    path = CoefficientPath.closed_form(func, q, float(spec["nu"]))
    path.source = [[str(e) for e in row] for row in table]
    return path


def path_from_config(cfg, q):
    spec = dict(operator_dict(cfg).get("coefficients", {"kind": "constant_alpha", "alpha": 1.0}))
    kind = spec.get("kind", "constant_alpha")
    nu = spec.get("nu")
    try:
        if kind == "constant_alpha":
            return CoefficientPath.constant_alpha(float(spec.get("alpha", 1.0)), q, nu)
        if kind == "constant_matrix":
            return CoefficientPath.constant_matrix(spec["matrix"], nu)
        if kind == "piecewise_constant":
            return CoefficientPath.piecewise_constant(spec["breakpoints"], spec["matrices"], nu)
        if kind == "closed_form":
            return _closed_form_path(spec, q)
    except KeyError as exc:
        raise SpecInvalid(f"coefficients of kind {kind!r} need {exc.args[0]!r}") from exc
    raise SpecInvalid(f"unknown coefficient kind {kind!r}")


def operator_from_config(cfg, seed=0):
    """(Group, CoefficientPath, FundamentalSolution) described by a configuration."""
    try:
        group = Group(structure_from_config(cfg), seed=seed)
        path = path_from_config(cfg, group.q)
        if path.q != group.q:
            raise SpecInvalid(f"coefficients are {path.q} x {path.q} but q = {group.q}")
        return group, path, FundamentalSolution(group, path)
    except SpecInvalid:
        raise
    except ValidationError as exc:
        raise SpecInvalid(f"{type(exc).__name__}: {exc}") from exc


def variable_coefficients(spec, q, N):
    """a_ij(x, t) from ``{"expressions": q x q table, "nu": ...}``; returns (func, nu)."""
    table = spec.get("expressions")
    if table is None or len(table) != q or any(len(row) != q for row in table):
        raise SpecInvalid(f"variable coefficients need a {q} x {q} table of expressions")
    exprs = [[Expression(str(e), N) for e in row] for row in table]

    def func(x, t):
        return np.stack([np.stack([e(x, t) for e in row], -1) for row in exprs], -2)

    return func, float(spec.get("nu", 1.0))
