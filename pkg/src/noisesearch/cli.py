"""Command line entry points.

Exit codes group failures by who must act: 0 success, 3 configuration,
4 backend or transport, 5 protocol violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._version import __version__
from .conformance import run_conformance
from .core import BudgetExhaustedError, InvalidDimensionError, InvalidParameterError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    default_config,
    run_experiment,
    sweep_rows,
    write_sweep_csv,
)
from .metrics import FrechetError, fit_stats, frechet_distance
from .protocol import (
    ProtocolServer,
    ProtocolError,
    RemoteBackendError,
    TransportError,
    VersionMismatchError,
    toy_backend_host,
)

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_CONFIG = 3
EXIT_BACKEND = 4
EXIT_PROTOCOL = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisesearch",
        description="Verifier-guided search over diffusion sampler noise.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="experiment JSON (defaults to the built-in benchmark)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
        p.add_argument("--backend-addr",
                       help="remote backend address host:port or unix:/path "
                            "(switches backend and verifier to remote)")

    p_validate = sub.add_parser("validate", help="check an experiment config and exit")
    common(p_validate)
    p_validate.set_defaults(func=_cmd_validate)

    p_run = sub.add_parser("run", help="run the configured experiment")
    common(p_run)
    p_run.add_argument("--workers", type=int, default=1, help="parallel trials (toy backend only)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="scaling curve over candidate counts")
    common(p_sweep)
    p_sweep.add_argument("--n", default="1,2,4,8,16",
                         help="comma-separated candidate counts (default 1,2,4,8,16)")
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel trials (toy backend only)")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_serve = sub.add_parser("serve-toy", help="serve the toy backend over the wire protocol")
    p_serve.add_argument("--config", help="experiment JSON supplying the toy mixture/verifier")
    p_serve.add_argument("--addr", default="127.0.0.1:0",
                         help="bind address host:port (port 0 picks a free port) or unix:/path")
    p_serve.set_defaults(func=_cmd_serve_toy)

    p_fid = sub.add_parser("fid", help="distribution distance between two feature files")
    p_fid.add_argument("features_a", help="first feature file (.npy or csv, rows are vectors)")
    p_fid.add_argument("features_b", help="second feature file")
    p_fid.set_defaults(func=_cmd_fid)

    p_conf = sub.add_parser("conformance", help="black-box protocol checks against a live server")
    p_conf.add_argument("--backend-addr", required=True,
                        help="server address host:port or unix:/path")
    p_conf.add_argument("--seed", type=int, default=0)
    p_conf.set_defaults(func=_cmd_conformance)

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else default_config()
    updates: dict = {}
    if getattr(args, "out", None):
        updates["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "backend_addr", None):
        updates["backend"] = {"kind": "remote", "address": args.backend_addr}
        updates["verifier"] = {"kind": "remote"}
    return replace(config, **updates) if updates else config


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    print(f"config ok: {config.name} ({len(config.searches)} searches x {config.trials} trials, "
          f"{config.steps} steps, alpha={config.weights.alpha})")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = run_experiment(config, workers=args.workers)
    for row in result.rows:
        print(f"{row.method}: nfes={row.nfes} mean_score={row.mean_score:.6f} "
              f"scaled={row.mean_score_scaled:.4f} fid={row.fid:.4f}")
    print(f"wrote {result.out_dir / 'table.csv'}")
    return EXIT_OK


def _parse_n_values(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--n expects comma-separated integers, got {raw!r}") from exc
    if not values:
        raise ConfigError("--n must name at least one candidate count")
    return values


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    n_values = _parse_n_values(args.n)
    rows = sweep_rows(config, n_values, workers=args.workers)
    out_dir = Path(config.output_dir) / config.name
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    write_sweep_csv(rows, path)
    for row in rows:
        print(f"n={row['n']}: nfes={row['nfes']} mean_score={row['mean_score']:.6f} "
              f"fid={row['fid']:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_serve_toy(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else default_config()
    if config.backend.get("kind") != "toy" or config.verifier.get("kind") != "toy":
        raise ConfigError("serve-toy needs a config with toy backend and toy verifier")
    from .experiment import _mixture_from_config
    from .verifier import ToyEmbeddingBackend

    mixture = _mixture_from_config(config.backend)
    backend = ToyEmbeddingBackend(mixture, target=config.verifier["target"],
                                  distractor=config.verifier["distractor"])
    host = toy_backend_host(
        mixture, backend,
        beta_min=float(config.backend.get("beta_min", 0.1)),
        beta_max=float(config.backend.get("beta_max", 20.0)),
        t_min=float(config.backend.get("t_min", 1e-3)),
        max_steps=int(config.backend.get("max_steps", 4096)),
    )
    server = ProtocolServer(host, args.addr)
    print(server.address, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def _load_features(path: str) -> np.ndarray:
    try:
        arr = np.load(path) if path.endswith(".npy") else np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read features {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"features {path} are not a numeric table: {exc}") from exc
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ConfigError(f"features must be 2-d with >= 2 rows, got shape {arr.shape}")
    return arr


def _cmd_fid(args: argparse.Namespace) -> int:
    a = _load_features(args.features_a)
    b = _load_features(args.features_b)
    value = frechet_distance(fit_stats(list(a)), fit_stats(list(b)))
    print(repr(value))
    return EXIT_OK


def _cmd_conformance(args: argparse.Namespace) -> int:
    results = run_conformance(args.backend_addr, seed=args.seed)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_PROTOCOL


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidParameterError, InvalidDimensionError) as exc:
        print(f"invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VersionMismatchError as exc:
        print(f"protocol version mismatch: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (TransportError, RemoteBackendError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (BudgetExhaustedError, FrechetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERIC


if __name__ == "__main__":
    sys.exit(main())
