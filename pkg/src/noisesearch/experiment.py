"""Experiment orchestration: config files, paired trials, manifests, tables.

A single JSON document describes one benchmark: the generative backend
(in-process toy mixture or a remote protocol server), the verifier, the
score weights, and a list of search configurations that all share a step
count. Trials are paired across searches by deriving each trial's base
seed from the experiment seed, so method comparisons see identical noise.
Outputs are deterministic: a manifest, one JSON report per run, and a
summary table written atomically after everything else succeeded.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ._kernels import BACKEND as KERNEL_BACKEND
from ._version import __version__
from .core import InvalidParameterError, NfeLedger, Sample, derive_seed
from .metrics import ScalingRow, fit_stats, frechet_distance, scaling_curve, write_scaling_csv
from .protocol import (
    PROTOCOL_VERSION,
    BackendConnection,
    RemoteEmbeddingBackend,
    RemoteSampler,
)
from .search import SearchConfig, SearchReport, Strategy, run_search
from .toydiff import GaussianMixture, ToySampler
from .verifier import ContrastVerifier, PromptPair, ScoreWeights

logger = logging.getLogger(__name__)

DEFAULT_CAPTION = "a city street at dusk"
SWEEP_HEADER = ["n", "nfes", "mean_score", "fid"]


class ConfigError(ValueError):
    """The experiment document is malformed or internally inconsistent."""


def _require(doc: dict[str, Any], key: str, context: str) -> Any:
    if key not in doc:
        raise ConfigError(f"{context} is missing required key {key!r}")
    return doc[key]


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    seed: int
    caption: str
    backend: dict[str, Any]
    verifier: dict[str, Any]
    weights: ScoreWeights
    searches: tuple[SearchConfig, ...]
    trials: int
    reference: dict[str, Any]
    output_dir: str

    def __post_init__(self) -> None:
        if not self.name or "/" in self.name or os.sep in self.name:
            raise ConfigError(f"experiment name must be a plain directory name, got {self.name!r}")
        if self.trials < 1:
            raise ConfigError(f"trials must be positive, got {self.trials}")
        if not self.searches:
            raise ConfigError("experiment needs at least one search configuration")
        steps = {s.steps for s in self.searches}
        if len(steps) != 1:
            raise ConfigError(f"all searches must share one step count, got {sorted(steps)}")
        names = [s.name for s in self.searches]
        if len(set(names)) != len(names):
            raise ConfigError(f"search names must be unique, got {names}")
        self._check_backend()
        self._check_verifier()
        self._check_reference()

    def _check_backend(self) -> None:
        kind = self.backend.get("kind")
        if kind == "toy":
            comps = self.backend.get("components")
            if not isinstance(comps, list) or not comps:
                raise ConfigError("toy backend needs a non-empty components list")
            max_steps = int(self.backend.get("max_steps", 4096))
            if any(s.steps > max_steps for s in self.searches):
                raise ConfigError(f"search steps exceed backend max_steps {max_steps}")
        elif kind == "remote":
            if not self.backend.get("address"):
                raise ConfigError("remote backend needs an address")
        else:
            raise ConfigError(f"backend kind must be 'toy' or 'remote', got {kind!r}")

    def _check_verifier(self) -> None:
        kind = self.verifier.get("kind")
        if kind == "toy":
            if self.backend.get("kind") != "toy":
                raise ConfigError("toy verifier requires the toy backend (it scores against "
                                  "mixture components)")
            for key in ("target", "distractor"):
                if not isinstance(self.verifier.get(key), int):
                    raise ConfigError(f"toy verifier needs integer {key!r}")
        elif kind == "remote":
            if self.backend.get("kind") != "remote":
                raise ConfigError("remote verifier requires the remote backend (embeddings are "
                                  "served over the same connection)")
        else:
            raise ConfigError(f"verifier kind must be 'toy' or 'remote', got {kind!r}")

    def _check_reference(self) -> None:
        if "path" in self.reference:
            return
        if self.backend.get("kind") != "toy":
            raise ConfigError("component-based reference features require the toy backend; "
                              "remote experiments must point reference.path at a feature file")
        for key in ("component", "count"):
            if not isinstance(self.reference.get(key), int):
                raise ConfigError(f"reference needs integer {key!r} (or a 'path')")
        if self.reference["count"] < 2:
            raise ConfigError("reference count must be at least 2 to fit statistics")

    @property
    def steps(self) -> int:
        return self.searches[0].steps

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("experiment document must be a JSON object")
        weights_doc = doc.get("weights", {})
        try:
            weights = ScoreWeights(
                alpha=float(weights_doc.get("alpha", 0.5)),
                report_scale=float(weights_doc.get("report_scale", 10.0)),
            )
        except InvalidParameterError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            searches = tuple(SearchConfig.from_dict(s) for s in _require(doc, "searches", "experiment"))
        except (InvalidParameterError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad search configuration: {exc}") from exc
        return cls(
            name=str(_require(doc, "name", "experiment")),
            seed=int(doc.get("seed", 0)),
            caption=str(doc.get("caption", DEFAULT_CAPTION)),
            backend=dict(_require(doc, "backend", "experiment")),
            verifier=dict(_require(doc, "verifier", "experiment")),
            weights=weights,
            searches=searches,
            trials=int(doc.get("trials", 8)),
            reference=dict(_require(doc, "reference", "experiment")),
            output_dir=str(doc.get("output_dir", "out")),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "caption": self.caption,
            "backend": dict(self.backend),
            "verifier": dict(self.verifier),
            "weights": {"alpha": self.weights.alpha, "report_scale": self.weights.report_scale},
            "searches": [s.to_dict() for s in self.searches],
            "trials": self.trials,
            "reference": dict(self.reference),
            "output_dir": self.output_dir,
        }


def default_config(output_dir: str = "out") -> ExperimentConfig:
    """Desk-scale benchmark: naive vs random vs zero-order at a shared budget."""
    components = [
        {"weight": 0.25, "mean": [3.0, 3.0], "cov": 0.25},
        {"weight": 0.25, "mean": [3.0, -3.0], "cov": 0.25},
        {"weight": 0.25, "mean": [-3.0, 3.0], "cov": 0.25},
        {"weight": 0.25, "mean": [-3.0, -3.0], "cov": 0.25},
    ]
    return ExperimentConfig(
        name="default",
        seed=0,
        caption=DEFAULT_CAPTION,
        backend={"kind": "toy", "components": components, "beta_min": 0.1,
                 "beta_max": 20.0, "t_min": 1e-3, "max_steps": 4096},
        verifier={"kind": "toy", "target": 0, "distractor": 3},
        weights=ScoreWeights(alpha=0.5, report_scale=10.0),
        searches=(
            SearchConfig(strategy=Strategy.NAIVE, steps=28),
            SearchConfig(strategy=Strategy.RANDOM, steps=28, n_candidates=12),
            SearchConfig(strategy=Strategy.ZERO_ORDER, steps=28, n_candidates=3,
                         iterations=4),
        ),
        trials=8,
        reference={"component": 0, "count": 256, "seed": 7},
        output_dir=output_dir,
    )


@dataclass(eq=False)
class Runtime:
    """Live handles for one experiment: sampler, embeddings, verifier."""

    sampler: Any
    embed_backend: Any
    verifier: ContrastVerifier
    mixture: GaussianMixture | None
    conn: BackendConnection | None
    backend_name: str

    def close(self) -> None:
        if self.conn is not None:
            self.conn.close()

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _mixture_from_config(backend: dict[str, Any]) -> GaussianMixture:
    comps = []
    for entry in backend["components"]:
        comps.append((float(entry["weight"]), entry["mean"], entry["cov"]))
    return GaussianMixture.from_components(comps)


def build_runtime(config: ExperimentConfig) -> Runtime:
    prompts = PromptPair.from_caption(config.caption)
    if config.backend["kind"] == "toy":
        mixture = _mixture_from_config(config.backend)
        sampler = ToySampler(
            mixture,
            beta_min=float(config.backend.get("beta_min", 0.1)),
            beta_max=float(config.backend.get("beta_max", 20.0)),
            t_min=float(config.backend.get("t_min", 1e-3)),
        )
        from .verifier import ToyEmbeddingBackend

        embed_backend = ToyEmbeddingBackend(
            mixture, target=config.verifier["target"], distractor=config.verifier["distractor"]
        )
        verifier = ContrastVerifier(embed_backend, prompts, config.weights)
        return Runtime(sampler=sampler, embed_backend=embed_backend, verifier=verifier,
                       mixture=mixture, conn=None, backend_name=ToySampler.producer)

    conn = BackendConnection(config.backend["address"])
    descriptor = conn.handshake()
    if config.steps > descriptor.max_steps:
        conn.close()
        raise ConfigError(f"search steps {config.steps} exceed remote max_steps "
                          f"{descriptor.max_steps}")
    sampler = RemoteSampler(conn, config.caption)
    embed_backend = RemoteEmbeddingBackend(conn)
    verifier = ContrastVerifier(embed_backend, prompts, config.weights)
    return Runtime(sampler=sampler, embed_backend=embed_backend, verifier=verifier,
                   mixture=None, conn=conn, backend_name=descriptor.name)


def reference_features(config: ExperimentConfig, runtime: Runtime) -> list[np.ndarray]:
    """Features defining the target population for distribution distances."""
    if "path" in config.reference:
        path = str(config.reference["path"])
        try:
            if path.endswith(".npy"):
                arr = np.load(path)
            else:
                arr = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError(f"cannot read reference features {path}: {exc}") from exc
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ConfigError(f"reference features must be a 2-d array with >= 2 rows, "
                              f"got shape {arr.shape}")
        return [row for row in arr]
    assert runtime.mixture is not None
    component = int(config.reference["component"])
    count = int(config.reference["count"])
    ref_seed = int(config.reference.get("seed", 0))
    features = []
    for i in range(count):
        draw = runtime.mixture.component_sampler(component, derive_seed(ref_seed, i))
        sample = Sample.vector(draw, producer="reference")
        features.append(runtime.embed_backend.embed_sample(sample))
    return features


def trial_seed(experiment_seed: int, trial: int) -> int:
    """Base seed for one trial; identical across searches to pair comparisons."""
    return derive_seed(experiment_seed, trial)


def _run_one(runtime: Runtime, search: SearchConfig) -> SearchReport:
    ledger = NfeLedger(budget=search.required_nfes)
    return run_search(runtime.sampler, runtime.verifier, search, ledger)


def _collect_reports(config: ExperimentConfig, runtime: Runtime,
                     workers: int) -> dict[str, list[SearchReport]]:
    jobs: list[tuple[int, int, SearchConfig]] = []
    for si, search in enumerate(config.searches):
        for t in range(config.trials):
            jobs.append((si, t, search.with_seed(trial_seed(config.seed, t))))

    results: dict[tuple[int, int], SearchReport] = {}
    if workers > 1 and runtime.conn is None:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_one, runtime, cfg): (si, t) for si, t, cfg in jobs}
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
    else:
        if workers > 1:
            logger.warning("remote backends serve one request at a time; running serially")
        for si, t, cfg in jobs:
            results[(si, t)] = _run_one(runtime, cfg)

    by_search: dict[str, list[SearchReport]] = {}
    for si, search in enumerate(config.searches):
        by_search[search.name] = [results[(si, t)] for t in range(config.trials)]
    return by_search


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    out_dir: Path
    rows: tuple[ScalingRow, ...]
    reports: dict[str, list[SearchReport]]


def _dump_json(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def manifest_for(config: ExperimentConfig, backend_name: str) -> dict[str, Any]:
    return {
        "config": config.to_dict(),
        "fingerprint": {
            "package_version": __version__,
            "protocol_version": PROTOCOL_VERSION,
            "kernel": KERNEL_BACKEND,
            "backend": backend_name,
        },
    }


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    out_dir = Path(config.output_dir) / config.name
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    with build_runtime(config) as runtime:
        _dump_json(out_dir / "manifest.json", manifest_for(config, runtime.backend_name))

        by_search = _collect_reports(config, runtime, workers)
        for search in config.searches:
            for report in by_search[search.name]:
                name = f"{report.config.name}-{report.config.base_seed}.json"
                _dump_json(runs_dir / name, report.to_dict())

        reference = reference_features(config, runtime)
        all_reports = [r for search in config.searches for r in by_search[search.name]]
        rows = scaling_curve(all_reports, reference, runtime.embed_backend, config.weights)

        # the table lands last and atomically: an aborted run leaves no csv
        tmp = out_dir / "table.csv.tmp"
        write_scaling_csv(rows, tmp)
        os.replace(tmp, out_dir / "table.csv")

    return ExperimentResult(out_dir=out_dir, rows=tuple(rows), reports=by_search)


def sweep_rows(config: ExperimentConfig, n_values: Sequence[int],
               workers: int = 1) -> list[dict[str, Any]]:
    """Candidate-count scaling curve for random search at fixed steps.

    The first random search in the config is the template. Candidate seeds
    nest: growing N keeps every earlier candidate, so the selected score is
    non-decreasing in N trial by trial.
    """
    template = next((s for s in config.searches if s.strategy is Strategy.RANDOM), None)
    if template is None:
        raise ConfigError("sweep needs a random search in the config to use as template")
    if not n_values or any(int(n) < 1 for n in n_values):
        raise ConfigError(f"sweep n values must be positive integers, got {list(n_values)}")

    with build_runtime(config) as runtime:
        reference = reference_features(config, runtime)
        searches = [replace(template, n_candidates=int(n), name="") for n in n_values]
        jobs = [(ni, t, search.with_seed(trial_seed(config.seed, t)))
                for ni, search in enumerate(searches) for t in range(config.trials)]
        results: dict[tuple[int, int], SearchReport] = {}
        if workers > 1 and runtime.conn is None:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_run_one, runtime, cfg): (ni, t) for ni, t, cfg in jobs}
                for fut in as_completed(futures):
                    results[futures[fut]] = fut.result()
        else:
            for ni, t, cfg in jobs:
                results[(ni, t)] = _run_one(runtime, cfg)

        rows: list[dict[str, Any]] = []
        for ni, search in enumerate(searches):
            reports = [results[(ni, t)] for t in range(config.trials)]
            scores = [r.best.scores["combined"] for r in reports]
            if len(reports) >= 2 and len(reference) >= 2:
                feats = [runtime.embed_backend.embed_sample(r.best.sample) for r in reports]
                fid = frechet_distance(fit_stats(feats), fit_stats(reference))
            else:
                fid = float("nan")
            rows.append({
                "n": search.n_candidates,
                "nfes": search.required_nfes,
                "mean_score": float(np.mean(scores)),
                "fid": fid,
            })
    return rows


def write_sweep_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([row["n"], row["nfes"], row["mean_score"], row["fid"]])
    os.replace(tmp, path)
