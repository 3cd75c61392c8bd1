"""Command-line entry point: ``fractv synth | denoise | bench``.

Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
3 the solver stopped at its iteration cap.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path


from . import __version__
from .config import FIDELITY_MODES, ConfigError, ProxConfig, RunReport, SolverConfig
from .frac_ops import ConvergenceError
from .image_pipeline import GENERATORS, NoiseSpec, PgmError, add_noise, load_pgm, save_pgm
from .solver_opt import SOLVERS as PROX_SOLVERS
from .solver_sb import split_bregman_denoise

log = logging.getLogger("fractv")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3
SOLVER_NAMES = ("sb", "fb", "nesterov", "fista")
CSV_COLUMNS = ("image", "solver", "alpha", "lambda", "sigma", "seed", "psnr", "snr", "outer_iters", "wall_seconds")


class UsageError(ValueError):
    pass


@dataclass
class RunManifest:
    """Everything needed to replay a run; flags override values read from ``--config``."""

    command: str
    source: str  # input path or generator name
    noise: NoiseSpec | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    prox: ProxConfig = field(default_factory=ProxConfig)
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "source": self.source,
            "noise": None if self.noise is None else asdict(self.noise),
            "solver": self.solver.to_dict(),
            "prox": self.prox.to_dict(),
            "outputs": dict(self.outputs),
            "extra": dict(self.extra),
            "version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        noise = data.get("noise")
        return cls(
            command=data["command"],
            source=data["source"],
            noise=None if noise is None else NoiseSpec(**noise),
            solver=SolverConfig.from_dict(data.get("solver", {})),
            prox=ProxConfig.from_dict(data.get("prox", {})),
            outputs=dict(data.get("outputs", {})),
            extra=dict(data.get("extra", {})),
        )


def run_solver(name: str, z, cfg: SolverConfig, pc: ProxConfig, clean=None, workers: int = 1):
    """Dispatch to one of the four solvers; returns ``(image, report)``."""
    if name == "sb":
        return split_bregman_denoise(z, cfg, clean=clean, workers=workers)
    if name in PROX_SOLVERS:
        return PROX_SOLVERS[name](z, cfg, pc, clean=clean, workers=workers)
    raise UsageError(f"unknown solver {name!r}; choose from {', '.join(SOLVER_NAMES)}")


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("FRACTV_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"FRACTV_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"thread count must be >= 1, got {value}")
    return value


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


_SOLVER_FLAGS = {
    "alpha": "alpha",
    "lam": "lam",
    "lambda1d": "lambda1d",
    "mu": "mu",
    "gamma": "gamma",
    "criterion": "criterion",
    "max_outer": "max_outer",
    "fidelity": "fidelity",
}


def build_solver_config(args, base: dict | None = None) -> SolverConfig:
    values = dict(base or {})
    for attr, key in _SOLVER_FLAGS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    if getattr(args, "no_boundary_lift", False):
        values["boundary_lift"] = False
    if "criterion" in values and values["criterion"].upper() != "CUSTOM":
        for key in ("tol_residual", "tol_error", "max_inner"):
            values.pop(key, None)
    return SolverConfig.from_dict(values)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambda1d", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--criterion", type=str.upper, choices=("GSC", "SSC"))
    p.add_argument("--max-outer", type=int)
    p.add_argument("--fidelity", choices=FIDELITY_MODES, help="how --lambda scales with image size")
    p.add_argument("--no-boundary-lift", action="store_true")
    p.add_argument("--threads", type=int)
    p.add_argument("--config", help="JSON manifest; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fractv", description="Total alpha-order variation denoising.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic test surface as PGM")
    p.add_argument("name", choices=sorted(GENERATORS))
    p.add_argument("n", type=int)
    p.add_argument("m", type=int)
    p.add_argument("out")
    p.add_argument("--sigma", type=float, default=0.0, help="noise std in [0, 1] intensity units")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--maxval", type=int, choices=(255, 65535), default=65535)

    p = sub.add_parser("denoise", help="denoise a PGM image")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="JSON report path (default: OUT with .json suffix)")
    p.add_argument("--solver", choices=SOLVER_NAMES, default=None)
    p.add_argument("--clean", help="reference PGM for PSNR/SNR")
    p.add_argument("--sigma", type=float, default=None, help="add seeded noise before denoising")
    p.add_argument("--seed", type=int, default=None)
    _add_solver_flags(p)

    p = sub.add_parser("bench", help="run a sweep over images, solvers, alpha and lambda")
    p.add_argument("--images", nargs="+", choices=sorted(GENERATORS), default=None)
    p.add_argument("--solver", nargs="+", choices=SOLVER_NAMES, default=None)
    p.add_argument("--alphas", nargs="+", type=float, default=None)
    p.add_argument("--lambdas", nargs="+", type=float, default=None)
    p.add_argument("--seed", nargs="+", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--report", help="JSON file receiving the manifest and per-row reports")
    _add_solver_flags(p)
    return parser


def cmd_synth(args) -> int:
    if args.n < 8 or args.m < 8:
        raise UsageError(f"image size must be at least 8x8, got {args.n}x{args.m}")
    img = GENERATORS[args.name](args.n, args.m)
    if args.sigma:
        img = add_noise(img, NoiseSpec(args.sigma, args.seed))
    save_pgm(args.out, img, maxval=args.maxval)
    return EXIT_OK


def cmd_denoise(args) -> int:
    base = _load_config_file(args.config)
    solver = args.solver or base.get("extra", {}).get("solver_name", "sb")
    cfg = build_solver_config(args, base.get("solver"))
    pc = ProxConfig.from_dict(base.get("prox", {}))
    threads = resolve_threads(args.threads)
    z = load_pgm(args.input)
    clean = load_pgm(args.clean) if args.clean else None
    noise = None
    sigma = args.sigma if args.sigma is not None else (base.get("noise") or {}).get("sigma")
    if sigma:
        seed = args.seed if args.seed is not None else (base.get("noise") or {}).get("seed", 0)
        noise = NoiseSpec(sigma, seed)
        if clean is None:
            clean = z
        z = add_noise(z, noise)
    report_path = args.report or str(Path(args.out).with_suffix(".json"))
    manifest = RunManifest(
        "denoise", args.input, noise, cfg, pc, {"image": args.out, "report": report_path}, {"solver_name": solver}
    )
    out, report = run_solver(solver, z, cfg, pc, clean=clean, workers=threads)
    report.manifest = manifest.to_dict()
    save_pgm(args.out, out, maxval=65535)
    Path(report_path).write_text(report.to_json(indent=2), encoding="utf-8")
    log.info("%s: %s after %d outer iterations", solver, report.stop_reason, report.outer_iters)
    return EXIT_OK if report.converged else EXIT_CAP


@dataclass(frozen=True)
class BenchRow:
    image: str
    solver: str
    alpha: float
    lam: float
    sigma: float
    seed: int
    size: int


def bench_rows(spec: dict) -> list[BenchRow]:
    return [
        BenchRow(img, s, a, lam, spec["sigma"], seed, spec["size"])
        for img in spec["images"]
        for s in spec["solvers"]
        for a in spec["alphas"]
        for lam in spec["lambdas"]
        for seed in spec["seeds"]
    ]


def run_bench_row(row: BenchRow, cfg: SolverConfig, pc: ProxConfig) -> tuple[dict, RunReport | None]:
    """One CSV row; failures are logged and leave the metric fields empty."""
    out = {
        "image": row.image,
        "solver": row.solver,
        "alpha": row.alpha,
        "lambda": row.lam,
        "sigma": row.sigma,
        "seed": row.seed,
        "psnr": "",
        "snr": "",
        "outer_iters": "",
        "wall_seconds": "",
    }
    try:
        clean = GENERATORS[row.image](row.size, row.size)
        z = add_noise(clean, NoiseSpec(row.sigma, row.seed))
        rcfg = cfg.replace(alpha=row.alpha, lam=row.lam, seed=row.seed)
        _, report = run_solver(row.solver, z, rcfg, pc, clean=clean)
    except Exception as exc:  # recorded per row; the sweep continues
        log.error("row %s failed: %s", row, exc)
        out["error"] = str(exc)
        return out, None
    out.update(
        psnr=repr(float(report.psnr)),
        snr=repr(float(report.snr)),
        outer_iters=report.outer_iters,
        wall_seconds=f"{report.wall_seconds:.3f}",
    )
    return out, report


def cmd_bench(args) -> int:
    base = _load_config_file(args.config)
    bench = dict(base.get("extra", {}).get("bench", {}))
    cfg = build_solver_config(args, base.get("solver"))
    pc = ProxConfig.from_dict(base.get("prox", {}))
    spec = {
        "images": args.images or bench.get("images", ["saddle"]),
        "solvers": args.solver or bench.get("solvers", list(SOLVER_NAMES)),
        "alphas": args.alphas or bench.get("alphas", [cfg.alpha]),
        "lambdas": args.lambdas or bench.get("lambdas", [cfg.lam]),
        "seeds": args.seed or bench.get("seeds", [cfg.seed]),
        "sigma": args.sigma if args.sigma is not None else bench.get("sigma", 10 / 255),
        "size": args.size or bench.get("size", 256),
    }
    if spec["size"] < 8:
        raise UsageError(f"bench image size must be >= 8, got {spec['size']}")
    threads = resolve_threads(args.threads)
    rows = bench_rows(spec)
    manifest = RunManifest(
        "bench", ",".join(spec["images"]), NoiseSpec(spec["sigma"], spec["seeds"][0]), cfg, pc,
        {"csv": args.out, "report": args.report}, {"bench": spec},
    )
    # rows are independent and seeded individually, so the pool size only changes timing
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: run_bench_row(r, cfg, pc), rows))
    else:
        results = [run_bench_row(r, cfg, pc) for r in rows]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row, _ in results:
            writer.writerow(row)
    if args.report:
        payload = {
            "manifest": manifest.to_dict(),
            "rows": [dict(r, report=None if rep is None else json.loads(rep.to_json())) for r, rep in results],
        }
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    failed = sum(rep is None for _, rep in results)
    if failed:
        log.error("%d of %d rows failed", failed, len(rows))
        return EXIT_IO if failed == len(rows) else EXIT_OK
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "denoise": cmd_denoise, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"fractv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, PgmError, json.JSONDecodeError) as exc:
        name = getattr(exc, "filename", None)
        where = f" ({name})" if name else ""
        print(f"fractv: I/O error{where}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConvergenceError as exc:
        print(f"fractv: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"fractv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
