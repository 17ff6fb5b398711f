"""Command line entry point: ``sdglm {fit,debias,test,simulate}``.

Settings come from a TOML file (``--config``); the flags ``--data``,
``--response``, ``--intercept``, ``--seed``, ``--workers`` and ``--out``
override it. Coordinates are 1-based regressor indices in CSV column order,
with 0 denoting the intercept.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DataError, InputError, NumericError, SdglmError
from .glm import Dataset, LossKind
from .inference import RestrictionSpec, confidence_interval, debias, infer, variance_alpha
from .nodewise import NodewiseConfig, estimate_precision, weighted_design
from .norms import L1, WGL, GroupPartition, NormSpec
from .simulate import SimConfig, lambda_grid, run_simulation, select_lambda_split
from .solver import FitResult, fit, lambda_max

log = logging.getLogger("sdglm")

COMMANDS = ("fit", "debias", "test", "simulate")


# -- serialization ---------------------------------------------------------

def _encode(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None or (isinstance(obj, float) and not math.isfinite(obj)):
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_encode(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        obj = list(obj)
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj) + "\n"


def write_fit_result(result: FitResult, path) -> None:
    Path(path).write_text(dumps(result.to_dict()))


def load_fit_result(path) -> FitResult:
    return FitResult.from_dict(json.loads(Path(path).read_text()))


def _write_outputs(outdir: Path, files: dict) -> None:
    """Write all files or none: stage in a temp dir, then move into place."""
    outdir.mkdir(parents=True, exist_ok=True)
    staged = []
    with tempfile.TemporaryDirectory(dir=outdir) as tmp:
        for name, text in files.items():
            tmp_path = Path(tmp) / name
            tmp_path.write_text(text)
            staged.append((tmp_path, outdir / name))
        for src, dst in staged:
            os.replace(src, dst)


# -- data ------------------------------------------------------------------

def ingest_csv(path, response_column: str, intercept: bool = False) -> Dataset:
    """Read a numeric CSV with a header row.

    ``y`` is the named column and ``X`` the remaining columns in header order.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if response_column not in header:
            raise DataError(f"{path}: response column {response_column!r} not in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: non-numeric value {cell.strip()!r}"
                    )
                values.append(v)
            rows.append(values)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two data rows")
    table = np.array(rows)
    k = header.index(response_column)
    X = np.delete(table, k, axis=1)
    return Dataset(table[:, k], X, intercept=intercept)


# -- configuration ---------------------------------------------------------

_TOP_KEYS = {"loss", "delta", "seed", "workers", "out", "data", "norm", "lambda",
             "nodewise", "restriction", "simulate"}


@dataclass
class RunConfig:
    command: str
    loss: LossKind = LossKind.LOGISTIC
    data_path: Optional[str] = None
    response: str = "y"
    intercept: bool = True
    norm_kind: str = L1
    groups: Optional[list] = None
    weak: str = L1
    lambda_rule: str = "split"
    lambda_value: Optional[float] = None
    grid_base: float = 0.3
    grid_len: int = 25
    nodewise_rows: List[int] = field(default_factory=list)
    nodewise_lambda: Optional[float] = None
    folds: int = 5
    nw_grid_len: int = 20
    nw_grid_ratio: float = 1e-3
    restrictions: List[dict] = field(default_factory=list)
    delta: float = 0.05
    seed: int = 0
    workers: int = 1
    out: str = "."
    simulate: dict = field(default_factory=dict)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def build_config(command: str, raw: dict, args: Optional[argparse.Namespace] = None) -> RunConfig:
    """Validate ``raw`` (parsed TOML) plus flag overrides.

    Every problem is collected and reported together in one
    :class:`ConfigError`.
    """
    problems = []
    cfg = RunConfig(command)

    def section(name):
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            problems.append(f"{name}: must be a table")
            return {}
        return sec

    def unknown(sec, allowed, prefix):
        for k in sec:
            if k not in allowed:
                problems.append(f"{prefix}{k}: unknown key")

    unknown(raw, _TOP_KEYS, "")

    if "loss" in raw:
        try:
            cfg.loss = LossKind.parse(raw["loss"])
        except InputError as e:
            problems.append(f"loss: {e}")
    if "delta" in raw:
        d = raw["delta"]
        if _is_num(d) and 0 < d < 1:
            cfg.delta = float(d)
        else:
            problems.append("delta: must be a number in (0, 1)")
    for key in ("seed", "workers"):
        if key in raw:
            v = raw[key]
            lo = 0 if key == "seed" else 1
            if _is_int(v) and lo <= v < 2**64:
                setattr(cfg, key, v)
            else:
                problems.append(f"{key}: must be an integer >= {lo}")
    if "out" in raw:
        if isinstance(raw["out"], str):
            cfg.out = raw["out"]
        else:
            problems.append("out: must be a path string")

    data = section("data")
    unknown(data, {"path", "response", "intercept"}, "data.")
    if "path" in data:
        cfg.data_path = str(data["path"])
    if "response" in data:
        cfg.response = str(data["response"])
    if "intercept" in data:
        if isinstance(data["intercept"], bool):
            cfg.intercept = data["intercept"]
        else:
            problems.append("data.intercept: must be true or false")

    norm = section("norm")
    unknown(norm, {"kind", "groups", "weak", "weights"}, "norm.")
    if "weights" in norm:
        problems.append("norm.weights: group weights are fixed at sqrt(group size)")
    kind = norm.get("kind", L1)
    if kind not in (L1, WGL):
        problems.append("norm.kind: must be 'l1' or 'wgl'")
    cfg.norm_kind = kind
    if kind == WGL:
        groups = norm.get("groups")
        if (not isinstance(groups, list) or not groups
                or not all(isinstance(g, list) and g and all(_is_int(i) for i in g) for g in groups)):
            problems.append("norm.groups: must be a non-empty list of non-empty integer lists")
        else:
            cfg.groups = groups
    elif "groups" in norm:
        problems.append("norm.groups: only valid with kind = 'wgl'")
    weak = norm.get("weak", L1)
    if weak == "same":
        weak = WGL
    if weak not in (L1, WGL) or (weak == WGL and kind != WGL):
        problems.append("norm.weak: must be 'l1', or 'same' with a group penalty")
    cfg.weak = weak

    lam = section("lambda")
    unknown(lam, {"value", "rule", "base", "length"}, "lambda.")
    if "value" in lam:
        if _is_num(lam["value"]) and lam["value"] >= 0:
            cfg.lambda_rule, cfg.lambda_value = "fixed", float(lam["value"])
        else:
            problems.append("lambda.value: must be a non-negative number")
        if lam.get("rule", "fixed") != "fixed":
            problems.append("lambda.rule: conflicts with lambda.value")
    else:
        rule = lam.get("rule", "split")
        if rule != "split":
            problems.append("lambda.rule: must be 'split' (or give lambda.value)")
    if "base" in lam:
        if _is_num(lam["base"]) and 0 < lam["base"] < 1:
            cfg.grid_base = float(lam["base"])
        else:
            problems.append("lambda.base: must lie in (0, 1)")
    if "length" in lam:
        if _is_int(lam["length"]) and lam["length"] >= 1:
            cfg.grid_len = lam["length"]
        else:
            problems.append("lambda.length: must be a positive integer")

    nw = section("nodewise")
    unknown(nw, {"rows", "lambda", "folds", "grid_len", "grid_ratio"}, "nodewise.")
    if "rows" in nw:
        rows = nw["rows"]
        if isinstance(rows, list) and rows and all(_is_int(r) and r >= 0 for r in rows):
            cfg.nodewise_rows = rows
        else:
            problems.append("nodewise.rows: must be a non-empty list of indices >= 0")
    if "lambda" in nw:
        if _is_num(nw["lambda"]) and nw["lambda"] >= 0:
            cfg.nodewise_lambda = float(nw["lambda"])
        else:
            problems.append("nodewise.lambda: must be a non-negative number")
    if "folds" in nw:
        if _is_int(nw["folds"]) and nw["folds"] >= 2:
            cfg.folds = nw["folds"]
        else:
            problems.append("nodewise.folds: must be an integer >= 2")
    if "grid_len" in nw:
        if _is_int(nw["grid_len"]) and nw["grid_len"] >= 1:
            cfg.nw_grid_len = nw["grid_len"]
        else:
            problems.append("nodewise.grid_len: must be a positive integer")
    if "grid_ratio" in nw:
        if _is_num(nw["grid_ratio"]) and 0 < nw["grid_ratio"] <= 1:
            cfg.nw_grid_ratio = float(nw["grid_ratio"])
        else:
            problems.append("nodewise.grid_ratio: must lie in (0, 1]")

    restr = raw.get("restriction", [])
    if not isinstance(restr, list):
        problems.append("restriction: must be an array of tables")
        restr = []
    for k, r in enumerate(restr, start=1):
        tag = f"restriction[{k}]"
        if not isinstance(r, dict):
            problems.append(f"{tag}: must be a table")
            continue
        unknown(r, {"coordinates", "values", "alpha", "null_value"}, f"{tag}.")
        if "alpha" in r:
            a = r["alpha"]
            if not (isinstance(a, list) and a and all(_is_num(v) for v in a)) or not any(a):
                problems.append(f"{tag}.alpha: must be a non-zero list of numbers")
            if "null_value" in r and not _is_num(r["null_value"]):
                problems.append(f"{tag}.null_value: must be a number")
            if "coordinates" in r or "values" in r:
                problems.append(f"{tag}: give either alpha or coordinates/values")
        else:
            c, v = r.get("coordinates"), r.get("values")
            if not (isinstance(c, list) and c and all(_is_int(i) and i >= 0 for i in c)):
                problems.append(f"{tag}.coordinates: must be a non-empty list of indices >= 0")
            elif len(set(c)) != len(c):
                problems.append(f"{tag}.coordinates: duplicates")
            if v is None:
                v = [0.0] * len(c) if isinstance(c, list) else []
            if not (isinstance(v, list) and all(_is_num(x) for x in v)) or (
                isinstance(c, list) and len(v) != len(c)
            ):
                problems.append(f"{tag}.values: must be numbers, one per coordinate")
            r = dict(r, values=v)
        cfg.restrictions.append(r)

    sim = section("simulate")
    unknown(sim, set(SimConfig.__dataclass_fields__) - {"seed"}, "simulate.")
    cfg.simulate = dict(sim)

    if args is not None:
        if args.data is not None:
            cfg.data_path = args.data
        if args.response is not None:
            cfg.response = args.response
        if args.intercept is not None:
            cfg.intercept = args.intercept
        if args.seed is not None:
            if 0 <= args.seed < 2**64:
                cfg.seed = args.seed
            else:
                problems.append("--seed: must be a 64-bit unsigned integer")
        if args.workers is not None:
            if args.workers >= 1:
                cfg.workers = args.workers
            else:
                problems.append("--workers: must be at least 1")
        if args.out is not None:
            cfg.out = args.out

    if command == "simulate":
        try:
            SimConfig(**cfg.simulate, seed=cfg.seed)
        except ConfigError as e:
            problems.extend(f"simulate.{p}" for p in e.problems)
        except TypeError as e:
            problems.append(f"simulate: {e}")
    else:
        if cfg.data_path is None:
            problems.append("data.path: required (or pass --data)")
        if command in ("debias", "test") and not cfg.nodewise_rows:
            # rows default to the restricted coordinates for `test`
            if command == "debias" or not cfg.restrictions:
                problems.append("nodewise.rows: required")
        if command == "test" and not cfg.restrictions:
            problems.append("restriction: at least one is required for `test`")
        if not cfg.intercept:
            for r in cfg.nodewise_rows:
                if r == 0:
                    problems.append("nodewise.rows: index 0 (intercept) used without an intercept")
    if problems:
        raise ConfigError(problems)
    return cfg


def _check_against_data(cfg: RunConfig, data: Dataset) -> None:
    problems = []
    p = data.p

    def col_ok(i):
        return (i == 0 and cfg.intercept) or 1 <= i <= p

    for i in cfg.nodewise_rows:
        if not col_ok(i):
            problems.append(f"nodewise.rows: index {i} outside 0..{p}")
    for k, r in enumerate(cfg.restrictions, start=1):
        if "alpha" in r:
            if len(r["alpha"]) != data.n_coef:
                problems.append(f"restriction[{k}].alpha: length must be {data.n_coef}")
        else:
            for i in r["coordinates"]:
                if not col_ok(i):
                    problems.append(f"restriction[{k}].coordinates: index {i} outside 0..{p}")
    if cfg.groups is not None:
        try:
            GroupPartition.from_lists(cfg.groups, p)
        except InputError as e:
            problems.append(f"norm.groups: {e} (indices 1..{p})")
    if problems:
        raise ConfigError(problems)


# -- commands --------------------------------------------------------------

def _col(cfg: RunConfig, i: int) -> int:
    """CLI index (0 = intercept, k = k-th regressor) -> design column."""
    return i if cfg.intercept else i - 1


def _label(cfg: RunConfig, j: int) -> str:
    return str(j if cfg.intercept else j + 1)


def _spec(cfg: RunConfig, p: int) -> NormSpec:
    if cfg.norm_kind == WGL:
        return NormSpec.group_lasso(GroupPartition.from_lists(cfg.groups, p), cfg.weak)
    return NormSpec.l1(p)


def _fit(cfg: RunConfig, data: Dataset):
    spec = _spec(cfg, data.p)
    if cfg.lambda_rule == "fixed":
        lam = cfg.lambda_value
    else:
        grid = lambda_grid(lambda_max(data, cfg.loss, spec), cfg.grid_base, cfg.grid_len)
        lam = select_lambda_split(data, cfg.loss, spec, grid)
    res = fit(data, cfg.loss, spec, lam)
    if not np.isfinite(res.beta_hat).all():
        raise NumericError("fit produced non-finite coefficients")
    return spec, res


def _precision(cfg: RunConfig, data: Dataset, spec: NormSpec, beta_hat, rows):
    weak = L1
    if cfg.weak == WGL:
        groups = [g + data.n_unpenalized for g in spec.partition.groups]
        if data.intercept:
            groups = [np.array([0])] + groups
        weak = GroupPartition(groups, data.n_coef)
    Xw = weighted_design(data, cfg.loss, beta_hat)
    nw = NodewiseConfig(
        target_rows=rows,
        weak_norm=weak,
        lambda_nw=cfg.nodewise_lambda,
        folds=cfg.folds,
        grid_len=cfg.nw_grid_len,
        grid_ratio=cfg.nw_grid_ratio,
        seed=cfg.seed,
    )
    return estimate_precision(Xw, nw, workers=cfg.workers)


def _restriction(cfg: RunConfig, r: dict, n_coef: int) -> RestrictionSpec:
    if "alpha" in r:
        return RestrictionSpec(r["alpha"], r.get("null_value", 0.0))
    return RestrictionSpec.joint([_col(cfg, i) for i in r["coordinates"]], r["values"], n_coef)


def run_command(cfg: RunConfig) -> int:
    """Execute one command and write its artifacts into ``cfg.out``."""
    out = Path(cfg.out)
    if cfg.command == "simulate":
        sim = SimConfig(**cfg.simulate, seed=cfg.seed)
        report = run_simulation(sim, workers=cfg.workers)
        log.info("simulation finished in %.1f s (%d failed iterations)", report.runtime, report.n_failed)
        _write_outputs(out, {"simulate.json": dumps(report.to_dict()),
                             "simulate_table.txt": report.table()})
        return 0

    data = ingest_csv(cfg.data_path, cfg.response, cfg.intercept)
    _check_against_data(cfg, data)
    spec, res = _fit(cfg, data)
    if cfg.command == "fit":
        _write_outputs(out, {"fit.json": dumps(res.to_dict())})
        return 0

    rows = [_col(cfg, i) for i in cfg.nodewise_rows]
    restrictions = [_restriction(cfg, r, data.n_coef) for r in cfg.restrictions]
    for rs in restrictions:
        rows.extend(int(j) for j in rs.coordinates)
    rows = sorted(set(rows))
    theta = _precision(cfg, data, spec, res.beta_hat, rows)
    b = debias(res.beta_hat, theta, data, cfg.loss, rows)

    sigma, intervals = {}, {}
    for j in rows:
        e = np.zeros(data.n_coef)
        e[j] = 1.0
        sigma[j] = variance_alpha(e, theta, data, cfg.loss, res.beta_hat)
        intervals[j] = confidence_interval(j, b, sigma[j], data.n, cfg.delta)
    nodewise = {
        _label(cfg, j): {
            "lambda": theta.lambda_used[j],
            "tau_sq": theta.tau_sq[j],
            "inverse_residual": theta.inverse_residual[j],
        }
        for j in rows
    }
    payload = {
        "lambda": res.lam,
        "delta": cfg.delta,
        "b_hat": {_label(cfg, j): b[j] for j in rows},
        "sigma": {_label(cfg, j): sigma[j] for j in rows},
        "intervals": {_label(cfg, j): list(intervals[j]) for j in rows},
        "nodewise": nodewise,
    }
    if cfg.command == "debias":
        _write_outputs(out, {"debias.json": dumps(payload)})
        return 0

    tests = []
    for rs in restrictions:
        rep = infer(rs, res.beta_hat, theta, data, cfg.loss, (), cfg.delta)
        tests.append({
            "alpha": {_label(cfg, int(j)): rs.alpha[j] for j in rs.coordinates},
            "null_value": rs.null_value,
            "estimate": float(sum(rs.alpha[j] * b[int(j)] for j in rs.coordinates)),
            "v_alpha": rep.v_alpha,
            "z": rep.z,
            "p_value": rep.p_value,
            "reject": bool(rep.p_value < cfg.delta),
        })
    payload["tests"] = tests
    _write_outputs(out, {"test.json": dumps(payload)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdglm",
        description="Debiased structured-sparsity GLM estimation and inference.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--data", help="CSV file with a header row")
    parser.add_argument("--response", help="name of the response column")
    parser.add_argument("--intercept", dest="intercept", action="store_true", default=None,
                        help="prepend an unpenalized intercept (default)")
    parser.add_argument("--no-intercept", dest="intercept", action="store_false")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        raw = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise ConfigError(f"--config: {path} does not exist")
            try:
                raw = tomllib.loads(path.read_text())
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"--config: {e}") from None
        cfg = build_config(args.command, raw, args)
        return run_command(cfg)
    except ConfigError as e:
        for p in e.problems:
            print(f"sdglm: config error: {p}", file=sys.stderr)
        return e.exit_code
    except SdglmError as e:
        print(f"sdglm: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
