"""Config-driven experiment runs, parameter sweeps and task-file generation.

Configs are JSON documents. A minimal one names a task and a hidden size::

    {"task": {"kind": "overlap", "L": 2, "G": 2, "N_G": 20},
     "network": {"M": 4}}

Everything else falls back to ``DEFAULTS``. Each repetition derives its own
seeds from the master seed, so results do not depend on ``n_jobs``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .evaluation import (balance_csv, balance_points, confusion_from_labels, classify_many,
                         metrics_report)
from .exceptions import ConfigError, QcnError
from .network import build_topology, mean_hopping
from .tasks import (LabeledStates, gen_ipr_task, ipr_labels, load_substrates,
                    normalize_features, overlap_labels, random_overlap_task, random_real_states,
                    split_train_validate, substrates_to_csv, synthetic_substrates, two_state_task)
from .train import GdConfig, PsoConfig, TrainingError, cost_trace_csv, train_network
from .transport import Rates

logger = logging.getLogger(__name__)

__all__ = ["DEFAULTS", "SWEEP_AXES", "OUTPUT_ENV", "load_config", "validate_config",
           "config_hash", "run", "sweep", "gen_data"]

OUTPUT_ENV = "QCNET_OUTPUT_DIR"
SWEEP_AXES = ("dephasing_rate", "hidden_size", "ts_size")

DEFAULTS = {
    "network": {"L": None, "N_c": None, "train_onsite": None, "t_max": 1.0},
    "rates": {"gamma_in": 1.0, "gamma": 1.0, "dephasing": 0.0, "eval_dephasing": None},
    "pso": {"swarm_size": 50, "iterations": 300, "w": 0.729, "c1": 1.49445, "c2": 1.49445,
            "vmax_frac": 0.5},
    "gd": {"lr": 0.05, "iterations": 200, "h": 1e-4, "tol": 1e-14},
    "validation": {"N_v": 1000, "tie_tol": 1e-12},
    "repetitions": 1,
    "seed": 0,
    "output_dir": "results",
    "n_jobs": 1,
}
TASK_DEFAULTS = {
    "overlap": {"x": None, "mirrored": None},
    "ipr": {"lo": 2.0, "hi": 3.0, "nonnegative": True},
    "chemical": {"csv": None, "n_descriptors": 10, "synthetic_rows": 60, "synthetic_seed": 0},
}
# fields that change where or how fast a run happens but not its results
_UNHASHED = ("output_dir", "n_jobs")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["task", "network"],
    "additionalProperties": False,
    "properties": {
        "task": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["overlap", "ipr", "chemical"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "overlap"}}},
                 "then": {"required": ["L", "G", "N_G"], "additionalProperties": False,
                          "properties": {"kind": {}, "L": {"type": "integer", "minimum": 2},
                                         "G": {"type": "integer", "minimum": 2},
                                         "N_G": _count, "x": {"type": ["number", "null"]},
                                         "mirrored": {"type": ["boolean", "null"]}}}},
                {"if": {"properties": {"kind": {"const": "ipr"}}},
                 "then": {"required": ["L", "N_TS"], "additionalProperties": False,
                          "properties": {"kind": {}, "L": {"type": "integer", "minimum": 2},
                                         "N_TS": {"type": "integer", "minimum": 2,
                                                  "multipleOf": 2},
                                         "lo": _num, "hi": _num,
                                         "nonnegative": {"type": "boolean"}}}},
                {"if": {"properties": {"kind": {"const": "chemical"}}},
                 "then": {"required": ["N_TS"], "additionalProperties": False,
                          "properties": {"kind": {}, "N_TS": _count,
                                         "csv": {"type": ["string", "null"]},
                                         "n_descriptors": _count,
                                         "synthetic_rows": {"type": "integer", "minimum": 3},
                                         "synthetic_seed": {"type": "integer", "minimum": 0}}}},
            ],
        },
        "network": {
            "type": "object",
            "required": ["M"],
            "additionalProperties": False,
            "properties": {"L": {"type": ["integer", "null"], "minimum": 1}, "M": _count,
                           "N_c": {"type": ["integer", "null"], "minimum": 1},
                           "train_onsite": {"type": ["boolean", "null"]}, "t_max": _pos},
        },
        "rates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"gamma_in": _pos, "gamma": _pos, "dephasing": _nonneg,
                           "eval_dephasing": {"type": ["number", "null"], "minimum": 0}},
        },
        "pso": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"swarm_size": {"type": "integer", "minimum": 2},
                           "iterations": _count,
                           "w": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                           "c1": _nonneg, "c2": _nonneg, "vmax_frac": _pos},
        },
        "gd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lr": _pos, "iterations": {"type": "integer", "minimum": 0},
                           "h": _pos, "tol": _nonneg},
        },
        "validation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N_v": {"type": ["integer", "null"], "minimum": 0},
                           "tie_tol": _nonneg},
        },
        "repetitions": _count,
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "n_jobs": _count,
    },
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = [f for f in err.validator_value if f not in err.instance]
        return ConfigError("required field is missing", ".".join(filter(None, [path, missing[0]])))
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ConfigError("unknown field", ".".join(filter(None, [path, extra[0]])))
    return ConfigError(err.message, path)


def _task_classes(task: dict) -> int:
    return {"overlap": task.get("G"), "ipr": 2, "chemical": 3}[task["kind"]]


def _task_length(task: dict) -> int:
    return task["n_descriptors"] if task["kind"] == "chemical" else task["L"]


def validate_config(cfg: dict) -> dict:
    """Check ``cfg`` and return it with all defaults filled in.

    Raises ConfigError whose ``path`` is the dotted location of the first
    offending field.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        raise _schema_error(jsonschema.exceptions.best_match(errors))
    full = _merge(DEFAULTS, cfg)
    full["task"] = _merge(TASK_DEFAULTS[cfg["task"]["kind"]], cfg["task"])
    task, net = full["task"], full["network"]
    if task["kind"] == "chemical" and "N_v" not in cfg.get("validation", {}):
        full["validation"]["N_v"] = None  # validate on every substrate not trained on

    L, n_classes = _task_length(task), _task_classes(task)
    if net["L"] is None:
        net["L"] = L
    elif net["L"] != L:
        raise ConfigError(f"network input size {net['L']} != task vector length {L}",
                          "network.L")
    if net["N_c"] is None:
        net["N_c"] = n_classes
    elif net["N_c"] != n_classes:
        raise ConfigError(f"{net['N_c']} exit sites for {n_classes} classes", "network.N_c")
    if net["train_onsite"] is None:
        net["train_onsite"] = net["L"] > net["M"]
    elif net["L"] > net["M"] and not net["train_onsite"] and full["rates"]["dephasing"] == 0:
        raise ConfigError("L > M leaves entry modes decoupled; set train_onsite to true",
                          "network.train_onsite")

    if task["kind"] == "overlap" and task["x"] is not None:
        if (task["L"], task["G"], task["N_G"]) != (2, 2, 1):
            raise ConfigError("the two-state task needs L = 2, G = 2, N_G = 1", "task.x")
    if task["kind"] == "ipr":
        if not 1 <= task["lo"] < task["hi"] <= task["L"]:
            raise ConfigError("need 1 <= lo < hi <= L", "task.lo")
    if task["kind"] == "chemical":
        rows = None if task["csv"] else task["synthetic_rows"]
        n_v = full["validation"]["N_v"]
        if rows is not None and task["N_TS"] + (n_v or 0) > rows:
            raise ConfigError(f"N_TS + N_v exceeds {rows} substrates", "validation.N_v")
    return full


def load_config(path) -> dict:
    """Read and validate a JSON config; a relative ``task.csv`` resolves
    against the config file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}") from None
    cfg = validate_config(raw)
    csv_path = cfg["task"].get("csv")
    if csv_path and not Path(csv_path).is_absolute():
        cfg["task"]["csv"] = str((path.parent / csv_path).resolve())
    return cfg


def config_hash(cfg: dict) -> str:
    """Short SHA-256 of the canonical JSON config, ignoring output location and n_jobs."""
    relevant = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _resolve_output(cfg: dict, output_dir=None) -> Path:
    return Path(output_dir or os.environ.get(OUTPUT_ENV) or cfg["output_dir"])


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------- data per task

def _draw_until(n_keep, L, rng, nonnegative, lo, hi, chunk=4096):
    kept, labels, excluded = [], [], 0
    while sum(len(k) for k in kept) < n_keep:
        X = random_real_states(chunk, L, rng, nonnegative)
        y = ipr_labels(X, lo, hi)
        need = n_keep - sum(len(k) for k in kept)
        idx = np.flatnonzero(y)[:need]
        last = idx[-1] + 1 if len(idx) == need else chunk
        excluded += int(np.sum(y[:last] == 0))
        kept.append(X[idx])
        labels.append(y[idx])
    return np.concatenate(kept), np.concatenate(labels), excluded


def _task_data(cfg: dict, data_ss, val_ss):
    """Training set, validation items, exclusion count and the task object."""
    task, n_v = cfg["task"], cfg["validation"]["N_v"]
    data_rng, val_rng = np.random.default_rng(data_ss), np.random.default_rng(val_ss)
    kind = task["kind"]
    if kind == "overlap":
        if task["x"] is not None:
            t = two_state_task(task["x"])
        else:
            t = random_overlap_task(task["L"], task["G"], task["N_G"], data_rng, task["mirrored"])
        Psi = random_real_states(n_v or 0, task["L"], val_rng)
        labels, ties = overlap_labels(Psi, t, cfg["validation"]["tie_tol"])
        val = LabeledStates(Psi[~ties], labels[~ties])
        return t.training_set(), val, int(ties.sum()), t
    if kind == "ipr":
        t = gen_ipr_task(task["L"], task["N_TS"], task["lo"], task["hi"], data_rng,
                         task["nonnegative"])
        Psi, labels, excluded = _draw_until(n_v or 0, task["L"], val_rng, task["nonnegative"],
                                            task["lo"], task["hi"])
        return t.training_set(), LabeledStates(Psi, labels), excluded, t
    table = (load_substrates(task["csv"], task["n_descriptors"]) if task["csv"]
             else synthetic_substrates(task["synthetic_rows"], task["n_descriptors"],
                                       task["synthetic_seed"]))
    items = normalize_features(table)
    n_val = len(items) - task["N_TS"] if n_v is None else n_v
    train, val = split_train_validate(items, task["N_TS"], n_val, data_rng)
    return train, val, 0, None


def _spec(cfg: dict):
    net = cfg["network"]
    return build_topology(net["L"], net["M"], net["N_c"], net["train_onsite"], net["t_max"])


def _evaluate(model, val: LabeledStates, excluded: int) -> dict:
    n = model.spec.n_out
    if len(val) == 0:
        cm = np.zeros((n, n), dtype=int)
    else:
        cm = confusion_from_labels(val.labels, classify_many(model, val.phi), n)
    return metrics_report(cm, excluded)


def _repetition(cfg: dict, rep: int, eval_points: list):
    """Train and validate one repetition.

    ``eval_points`` lists dephasing rates, in units of the trained network's
    mean hopping, at which to validate; ``None`` keeps the training rates.
    Returns a picklable dict of results and artifact texts.
    """
    rep_ss = np.random.SeedSequence(cfg["seed"]).spawn(rep + 1)[rep]
    data_ss, pso_ss, val_ss = rep_ss.spawn(3)
    out = {"rep": rep, "seed": _seed_int(rep_ss)}
    r = cfg["rates"]
    rates = Rates(r["gamma_in"], r["gamma"], r["dephasing"])
    try:
        train, val, excluded, task = _task_data(cfg, data_ss, val_ss)
        spec = _spec(cfg)
        model = train_network(spec, train, PsoConfig(seed=_seed_int(pso_ss), **cfg["pso"]),
                              GdConfig(**cfg["gd"]), rates)
    except TrainingError as exc:
        out.update(status="failed", error=str(exc), model_json=exc.params_json)
        return out
    except QcnError as exc:
        out.update(status="failed", error=str(exc), model_json=None)
        return out

    tbar = mean_hopping(spec, model.params)
    points = []
    for g in eval_points:
        m = model if g is None else replace(model, rates=replace(rates, dephasing=g * tbar))
        try:
            metrics = _evaluate(m, val, excluded)
            err = None
        except QcnError as exc:
            metrics, err = None, str(exc)
        points.append({"eval_dephasing": g, "metrics": metrics, "error": err})

    balance = None
    if task is not None and getattr(task, "n_groups", 0) == 2 and len(val):
        try:
            balance = balance_points(model, task, val.phi).tolist()
        except QcnError:
            balance = None
    out.update(status="ok", error=None, final_cost=model.cost_trace[-1][1]
               if model.cost_trace else None, train_accuracy=model.train_accuracy,
               mean_hopping=tbar, model_json=model.to_json(), trace_csv=cost_trace_csv(model),
               points=points, balance=balance)
    return out


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return {"mean": float(np.mean(vals)), "std": std, "n": len(vals)}


def _summary(rep_metrics: list) -> dict:
    ok = [m for m in rep_metrics if m is not None]
    return {key: _stats([m[key] for m in ok]) for key in ("macro_P", "macro_R", "accuracy")}


def _run_reps(cfg: dict, eval_points: list):
    reps = range(cfg["repetitions"])
    if cfg["n_jobs"] > 1 and cfg["repetitions"] > 1:
        with ProcessPoolExecutor(max_workers=min(cfg["n_jobs"], cfg["repetitions"])) as pool:
            return list(pool.map(_repetition, [cfg] * len(reps), reps,
                                 [eval_points] * len(reps)))
    return [_repetition(cfg, rep, eval_points) for rep in reps]


def _write_bundle(cfg: dict, results: list, point: int, out_dir: Path) -> dict:
    h = config_hash(cfg)
    tag = f"config_hash={h}, seed={cfg['seed']}"
    reps, metrics = [], []
    for res in results:
        entry = {"rep": res["rep"], "seed": res["seed"], "status": res["status"],
                 "error": res["error"]}
        name = f"rep{res['rep']:02d}"
        rep_tag = f"config_hash={h}, seed={res['seed']}"
        if res.get("model_json"):
            model = json.loads(res["model_json"])
            model.update(config_hash=h, seed=res["seed"])
            _atomic_write(out_dir / f"{name}_model.json", _dumps(model))
        if res["status"] == "ok":
            p = res["points"][point]
            entry.update(final_cost=res["final_cost"], train_accuracy=res["train_accuracy"],
                         mean_hopping=res["mean_hopping"], eval_dephasing=p["eval_dephasing"],
                         metrics=p["metrics"])
            if p["error"]:
                entry.update(status="failed", error=p["error"])
            metrics.append(p["metrics"])
            _atomic_write(out_dir / f"{name}_cost_trace.csv", f"# {rep_tag}\n" + res["trace_csv"])
            if res["balance"] is not None:
                _atomic_write(out_dir / f"{name}_balance.csv", balance_csv(res["balance"], rep_tag))
        reps.append(entry)
    summary = {"config_hash": h, "seed": cfg["seed"], "repetitions": len(results),
               "n_failed": sum(r["status"] != "ok" for r in reps), **_summary(metrics)}
    _atomic_write(out_dir / "metrics.json",
                  _dumps({"config_hash": h, "seed": cfg["seed"], "repetitions": reps}))
    _atomic_write(out_dir / "summary.json", _dumps(summary))
    _atomic_write(out_dir / "config.json", _dumps({**cfg, "config_hash": h}))
    logger.info("wrote %s (%s)", out_dir, tag)
    return summary


def run(cfg: dict, output_dir=None) -> dict:
    """Run every repetition of ``cfg`` and write its result bundle.

    Files: ``metrics.json`` (per repetition), ``summary.json`` (mean and
    sample std of macro P, R and accuracy), ``config.json``, and per
    repetition ``repNN_model.json``, ``repNN_cost_trace.csv`` and, for
    two-group overlap tasks, ``repNN_balance.csv``. Returns the summary.
    """
    cfg = validate_config(cfg)
    out_dir = _resolve_output(cfg, output_dir)
    results = _run_reps(cfg, [cfg["rates"]["eval_dephasing"]])
    return _write_bundle(cfg, results, 0, out_dir)


def _apply_axis(cfg: dict, axis: str, value) -> dict:
    cfg = copy.deepcopy(cfg)
    if axis == "dephasing_rate":
        cfg["rates"]["eval_dephasing"] = float(value)
    elif axis == "hidden_size":
        cfg["network"]["M"] = int(value)
        cfg["network"]["train_onsite"] = None
    elif axis == "ts_size":
        key = "N_G" if cfg["task"]["kind"] == "overlap" else "N_TS"
        cfg["task"][key] = int(value)
    return cfg


def sweep(cfg: dict, axis: str, values, output_dir=None) -> str:
    """One run per value of ``axis``; returns the sweep CSV text.

    Each point is written to ``<output>/<axis>=<value>/``. Every point uses the
    same master seed, so points differ only in the swept quantity. A dephasing
    sweep trains each repetition once at the configured rates and validates
    it at ``value`` times the trained network's mean hopping.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {list(SWEEP_AXES)}", "axis")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value", "values")
    base = validate_config(cfg)
    out_dir = _resolve_output(base, output_dir)
    base = {**base, "output_dir": str(out_dir)}
    point_cfgs = []
    for v in values:
        raw = _apply_axis(base, axis, v)
        for k in ("L", "N_c"):
            raw["network"][k] = None
        point_cfgs.append(validate_config(raw))

    summaries = []
    if axis == "dephasing_rate":
        results = _run_reps(point_cfgs[0], [float(v) for v in values])
        for k, (v, pc) in enumerate(zip(values, point_cfgs)):
            summaries.append(_write_bundle(pc, results, k, out_dir / f"{axis}={v}"))
    else:
        for v, pc in zip(values, point_cfgs):
            summaries.append(_write_bundle(pc, _run_reps(pc, [pc["rates"]["eval_dephasing"]]),
                                           0, out_dir / f"{axis}={v}"))

    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash(base)}, seed={base['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = ["macro_P", "macro_R", "accuracy"]
    w.writerow([axis, "n_ok"] + [f"{c}_{s}" for c in cols for s in ("mean", "std")])
    fmt = lambda x: "" if x is None else repr(x)  # noqa: E731
    for v, s in zip(values, summaries):
        w.writerow([v, s["repetitions"] - s["n_failed"]]
                   + [fmt(s[c][s_]) for c in cols for s_ in ("mean", "std")])
    text = buf.getvalue()
    _atomic_write(out_dir / f"sweep_{axis}.csv", text)
    return text


GEN_KINDS = ("substrates", "overlap", "ipr")


def gen_data(kind: str, params: dict, seed: int, path) -> Path:
    """Write a reproducible task file: substrate CSV, or overlap/IPR task JSON."""
    params = dict(params or {})
    tag = f"seed={seed}"
    try:
        if kind == "substrates":
            table = synthetic_substrates(params.get("n", 60), params.get("n_descriptors", 10),
                                         seed, params.get("spread", 0.35))
            text = substrates_to_csv(table, comment=f"{tag}, kind=substrates")
        elif kind == "overlap":
            if params.get("x") is not None:
                task = two_state_task(params["x"])
            else:
                task = random_overlap_task(params.get("L", 2), params.get("G", 2),
                                           params.get("N_G", 20), seed, params.get("mirrored"))
            text = task.to_json() + "\n"
        elif kind == "ipr":
            task = gen_ipr_task(params.get("L", 5), params.get("N_TS", 10), params.get("lo", 2.0),
                                params.get("hi", 3.0), seed, params.get("nonnegative", True))
            text = task.to_json() + "\n"
        else:
            raise ConfigError(f"unknown kind {kind!r}; choose from {list(GEN_KINDS)}", "kind")
    except TypeError as exc:
        raise ConfigError(f"bad parameter: {exc}", "params") from None
    path = Path(path)
    _atomic_write(path, text)
    return path
