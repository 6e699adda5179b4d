"""Experiment configuration, the grid-world task presets, and artifact I/O."""
from __future__ import annotations

import copy
import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .automaton import Fsa, product, to_dot, translate
from .env import FsaAugmentedMdp, GridWorld, config_hash, run_episode, summarize, _episode_seeds
from .learner import QTable, TrainConfig
from .logic import Formula, parse_formula

# regions of the 8 x 10 grid study; on integer cells each is a single point
GRID_MACROS = {
    "a": "1 < x < 3 & 1 < y < 3",
    "b": "4 < x < 6 & 4 < y < 6",
    "c": "1 < x < 3 & 6 < y < 8",
}
PHI1 = "F a & F b"
PHI2 = "F c"

# same task texts, but region c coincides with region a
OVERLAP_MACROS = dict(GRID_MACROS, c=GRID_MACROS["a"])

DEFAULT_CONFIG: dict[str, Any] = {
    "env": {
        "width": 10, "height": 8, "slip": 0.2, "horizon": 200, "start": "uniform",
        "macros": GRID_MACROS,
    },
    "formula": PHI1,
    "train": {"gamma": 0.95, "alpha": 0.1, "steps": 50_000},
    "eval": {"episodes": 50, "every": 200},
    "compose": {"stage": "c1", "updates": 50_000},
    "output": "runs/experiment",
    "seed": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def make_config(overrides: Mapping | None = None) -> dict:
    cfg = _merge(DEFAULT_CONFIG, overrides or {})
    validate_config(cfg)
    return cfg


def load_config(path: str | Path | None, overrides: Mapping | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = _merge(DEFAULT_CONFIG, raw)
    cfg = _merge(cfg, overrides or {})
    validate_config(cfg)
    return cfg


def validate_config(cfg: Mapping) -> None:
    env = cfg["env"]
    for key in ("width", "height", "horizon"):
        if not isinstance(env.get(key), int) or env[key] < 0:
            raise ConfigError(f"env.{key} must be a non-negative integer")
    if not 0 <= float(env.get("slip", -1)) <= 1:
        raise ConfigError("env.slip must lie in [0, 1]")
    start = env.get("start")
    if start != "uniform" and not (isinstance(start, (list, tuple)) and len(start) == 2):
        raise ConfigError("env.start must be 'uniform' or an [x, y] cell")
    if not isinstance(env.get("macros", {}), Mapping):
        raise ConfigError("env.macros must map names to formula text")
    train = cfg["train"]
    try:
        TrainConfig(gamma=train["gamma"], alpha=train["alpha"], steps=train["steps"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None
    try:
        grid_from_env_config(env)
        parse_task(cfg["formula"], env)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def grid_from_env_config(env: Mapping) -> GridWorld:
    start = env.get("start", "uniform")
    start = start if start == "uniform" else tuple(start)
    return GridWorld(env["width"], env["height"], env["slip"], start)


def parse_task(text: str, env: Mapping) -> Formula:
    return parse_formula(text, GridWorld.features, env.get("macros", {}))


def env_config_hash(env: Mapping) -> str:
    return config_hash(env)


def experiment_hash(cfg: Mapping) -> str:
    """Provenance hash of an experiment; where the outputs go does not count."""
    return config_hash({k: v for k, v in cfg.items() if k != "output"})


def augmented_env(env: Mapping, fsa: Fsa) -> FsaAugmentedMdp:
    return FsaAugmentedMdp(grid_from_env_config(env), fsa, env["horizon"])


def task_env(text: str, env: Mapping) -> FsaAugmentedMdp:
    formula = parse_task(text, env)
    return augmented_env(env, translate(formula))


# ---------------------------------------------------------------- artifacts

def write_automaton(fsa: Fsa, out_dir: str | Path, name: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, dpath = out / f"{name}.json", out / f"{name}.dot"
    jpath.write_text(json.dumps(fsa.to_json(), sort_keys=True, indent=1))
    dpath.write_text(to_dot(fsa, name=name.replace("-", "_")))
    return jpath, dpath


def rebuild_automaton(qt: QTable) -> tuple[dict, Fsa]:
    """Recreate the environment config and automaton a table was learned on."""
    meta = qt.metadata
    env = meta.get("env_config")
    if env is None:
        raise ConfigError("table metadata lacks env_config")
    if "product_of" in meta:
        f1, f2 = (translate(parse_formula(t, GridWorld.features)) for t in meta["product_of"])
        fsa: Fsa = product(f1, f2)
    else:
        fsa = translate(parse_formula(meta["formula"], GridWorld.features))
    if meta.get("fsa_fingerprint") not in (None, fsa.fingerprint()):
        raise ConfigError("automaton rebuilt from table metadata does not match its fingerprint")
    if qt.shape[1] != fsa.n_states:
        raise ConfigError("table automaton dimension does not match the rebuilt automaton")
    return env, fsa


def write_metrics(path: str | Path, rows: list[dict], header: Mapping[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.DictWriter(fh, fieldnames=["step", "success_rate", "mean_episode_len", "mean_return"])
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in w.fieldnames})


def _run_chunk(args) -> list[tuple[bool, int, float]]:
    env, policy, seeds = args
    return [run_episode(env, policy, np.random.default_rng(s)) for s in seeds]


def evaluate_parallel(env: FsaAugmentedMdp, policy: np.ndarray, episodes: int, seed: int, jobs: int = 1):
    """Same per-episode seeding as :func:`evaluate_satisfaction`, fanned out over processes."""
    seeds = _episode_seeds(seed, episodes)
    if jobs <= 1 or episodes < 2:
        return summarize(_run_chunk((env, policy, seeds)))
    chunks = [seeds[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, [(env, policy, c) for c in chunks]))
    # restore episode order so the report does not depend on the split
    results: list = [None] * episodes
    for j, part in enumerate(parts):
        for k, r in enumerate(part):
            results[j + k * jobs] = r
    return summarize(results)


def dump_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def is_product_table(qt: QTable) -> bool:
    return "product_of" in qt.metadata

