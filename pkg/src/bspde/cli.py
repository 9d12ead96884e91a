"""Command-line front end.

    bspde solve          --config run.json [--seed S] [--output out.json] [--override-cfl]
    bspde converge-space --config run.json ...
    bspde converge-time  --config run.json ...
    bspde regularity     --config run.json ...

The thread count for path-parallel kernels is read from ``BSPDE_NUM_THREADS``.
Errors are reported as a JSON record on stderr with a nonzero exit status.
"""

import argparse
import dataclasses
import json
import logging
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .basis import IntervalDomain, make_basis, reconstruct
from .catalog import get_entry
from .cond_exp import GaussQuadrature, LeastSquares
from .exceptions import BspdeError, InvalidArgument
from .harness import ErrorReport, converge_space, converge_time, regularity_probe, _jsonable
from .paths import make_grid, sample_ensemble
from .stepper import StepperConfig, check_cfl, solve_backward

log = logging.getLogger("bspde")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


@dataclass
class RunConfig:
    problem_name: str = "heat_phi1"
    domain_length: float = 1.0
    horizon_T: float = 0.1
    n: int = 1
    N: int = 10
    M: int = 100
    seed: int = 0
    estimator: dict = field(default_factory=lambda: {"kind": "least_squares", "degree": 3})
    picard_tol: float = 1e-12
    picard_max_iters: int = 50
    levels: Optional[list] = None
    output_path: Optional[str] = None
    n_ref: Optional[int] = None
    lags: list = field(default_factory=lambda: [1, 2, 4, 8])
    x_points: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    panels: Optional[int] = None
    override_cfl: bool = False
    dump_coefficients: bool = False

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {unknown}", code="unknown_config_key")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self):
        return _jsonable(dataclasses.asdict(self))

    def validate(self):
        def positive_int(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}", code="invalid_config")

        get_entry(self.problem_name)
        for name in ("n", "N", "M", "picard_max_iters"):
            positive_int(name)
        for name in ("domain_length", "horizon_T", "picard_tol"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise InvalidArgument(f"{name} must be a positive number, got {v!r}", code="invalid_config")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidArgument(f"seed must be an unsigned 64-bit integer, got {self.seed!r}",
                                  code="invalid_config")
        if self.horizon_T / self.N > 1.0:
            raise InvalidArgument(f"mesh T/N = {self.horizon_T / self.N:g} exceeds 1", code="mesh_too_large")
        for x in self.x_points:
            if not 0.0 < x < self.domain_length:
                raise InvalidArgument(f"x point {x} outside (0, {self.domain_length})", code="invalid_config")
        make_estimator(self.estimator)
        return self

    def stepper_config(self):
        return StepperConfig(float(self.picard_tol), int(self.picard_max_iters),
                             make_estimator(self.estimator), bool(self.override_cfl))


def make_estimator(spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InvalidArgument(f"estimator must be an object with a 'kind' key, got {spec!r}", code="invalid_config")
    params = {k: v for k, v in spec.items() if k != "kind"}
    kinds = {"least_squares": (LeastSquares, {"degree"}),
             "gauss_quadrature": (GaussQuadrature, {"points", "surface_degree"})}
    if spec["kind"] not in kinds:
        raise InvalidArgument(f"unknown estimator kind {spec['kind']!r}", code="invalid_config")
    cls, allowed = kinds[spec["kind"]]
    if set(params) - allowed:
        raise InvalidArgument(f"unknown estimator parameters {sorted(set(params) - allowed)}",
                              code="unknown_config_key")
    est = cls(**params)
    if isinstance(est, LeastSquares) and (not isinstance(est.degree, int) or est.degree < 0):
        raise InvalidArgument("least_squares degree must be a non-negative integer", code="invalid_config")
    if isinstance(est, GaussQuadrature) and (not isinstance(est.points, int) or est.points < 2):
        raise InvalidArgument("gauss_quadrature points must be an integer >= 2", code="invalid_config")
    return est


def _outputs(base, default):
    base = Path(base or default)
    stem = base.with_suffix("") if base.suffix in (".json", ".csv") else base
    return stem.with_suffix(".json"), stem.with_suffix(".csv")


def _write_json(path, payload):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"
    Path(path).write_text(text)


def _setup(cfg):
    problem = get_entry(cfg.problem_name).build(IntervalDomain(float(cfg.domain_length)), float(cfg.horizon_T))
    grid = make_grid(cfg.horizon_T, cfg.N)
    return problem, grid


def _log_override(cfg, cfl):
    if cfg.override_cfl and cfl > 1.0:
        log.warning("CFL guard overridden: lambda_n^2 * mesh = %.4g > 1", cfl)


def run_solve(cfg: RunConfig):
    problem, grid = _setup(cfg)
    basis = make_basis(problem.domain, cfg.n, cfg.panels)
    cfl = check_cfl(basis, grid, cfg.override_cfl)
    _log_override(cfg, cfl)
    ensemble = sample_ensemble(grid, cfg.M, cfg.seed)
    proc = solve_backward(problem, basis, ensemble, cfg.stepper_config())
    x = np.asarray(cfg.x_points, dtype=float)
    q = reconstruct(basis, proc.alpha, x)     # (N+1, M, len(x))
    r = reconstruct(basis, proc.z, x)         # (N, M, len(x))
    summary = {
        "command": "solve",
        "config": cfg.to_dict(),
        "times": grid.nodes,
        "x_points": x,
        "q_mean": q.mean(axis=1),
        "q_std": q.std(axis=1, ddof=1) if cfg.M > 1 else np.zeros(q.shape[::2]),
        "r_mean": r.mean(axis=1),
        "r_std": r.std(axis=1, ddof=1) if cfg.M > 1 else np.zeros(r.shape[::2]),
        "picard": proc.picard_summary(),
        "picard_iters": proc.picard_iters,
        "cfl_number": proc.cfl_number,
        "cfl_overridden": proc.cfl_overridden,
        "regression_truncations": int(sum(s.regression_truncated for s in proc.steps)),
    }
    json_path, _ = _outputs(cfg.output_path, "solve.json")
    _write_json(json_path, summary)
    if cfg.dump_coefficients:
        dump_process(proc, json_path.with_suffix(".coeffs.bin"))
    return summary


def dump_process(proc, path):
    """Header ``(N, M, n)`` as little-endian uint64, then alpha then z as row-major float64."""
    N, M, n = proc.grid.N, proc.M, proc.n
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQQ", N, M, n))
        fh.write(np.ascontiguousarray(proc.alpha, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(proc.z, dtype="<f8").tobytes())


def _finish(cfg, report, command, default):
    report.config = cfg.to_dict()
    json_path, csv_path = _outputs(cfg.output_path, default)
    payload = report.to_dict()
    payload["command"] = command
    _write_json(json_path, payload)
    report.to_csv(csv_path)
    return report


def run_converge_space(cfg: RunConfig):
    problem, grid = _setup(cfg)
    levels = cfg.levels or [2, 4, 8]
    n_ref = cfg.n_ref or 2 * max(levels)
    ensemble = sample_ensemble(grid, cfg.M, cfg.seed)
    check_cfl(make_basis(problem.domain, n_ref, cfg.panels), grid, cfg.override_cfl)
    _log_override(cfg, float((n_ref * np.pi / cfg.domain_length) ** 4 * grid.mesh))
    report = converge_space(problem, grid, ensemble, cfg.stepper_config(), levels, n_ref=n_ref, panels=cfg.panels)
    return _finish(cfg, report, "converge-space", "converge_space.json")


def run_converge_time(cfg: RunConfig):
    problem, _ = _setup(cfg)
    levels = cfg.levels or [8, 16, 32, 64]
    for N in levels:
        if cfg.horizon_T / N > 1.0:
            raise InvalidArgument(f"mesh T/N = {cfg.horizon_T / N:g} exceeds 1", code="mesh_too_large")
    basis = make_basis(problem.domain, cfg.n, cfg.panels)
    oracle = get_entry(cfg.problem_name).oracle(problem, basis)
    report = converge_time(problem, basis, cfg.seed, cfg.stepper_config(), levels, M=cfg.M, oracle=oracle)
    report.checks["cfl_overridden"] = bool(cfg.override_cfl and max(report.checks["cfl_numbers"]) > 1.0)
    return _finish(cfg, report, "converge-time", "converge_time.json")


def run_regularity(cfg: RunConfig):
    problem, grid = _setup(cfg)
    entry = get_entry(cfg.problem_name)
    basis = make_basis(problem.domain, cfg.n, cfg.panels)
    cfl = check_cfl(basis, grid, cfg.override_cfl)
    _log_override(cfg, cfl)
    ensemble = sample_ensemble(grid, cfg.M, cfg.seed)
    proc = solve_backward(problem, basis, ensemble, cfg.stepper_config())
    scales = entry.increment_scales(problem, basis, grid) if entry.increment_scales else None
    rows, summary = regularity_probe(proc, cfg.lags, scales)
    report = ErrorReport(regularity=rows, picard=[proc.picard_summary()])
    report.checks = {**summary, "cfl_number": cfl, "cfl_overridden": proc.cfl_overridden}
    _finish(cfg, report, "regularity", "regularity.json")
    _, csv_path = _outputs(cfg.output_path, "regularity.json")
    _regularity_csv(rows, csv_path)
    return report


def _regularity_csv(rows, path):
    cols = ("lag", "s", "alpha_increment", "alpha_stderr", "z_increment", "z_stderr", "ratio", "oracle")
    lines = [",".join(cols)]
    for row in rows:
        vals = [getattr(row, c) for c in cols]
        lines.append(",".join("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))
                              for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


COMMANDS = {
    "solve": run_solve,
    "converge-space": run_converge_space,
    "converge-time": run_converge_time,
    "regularity": run_regularity,
}


def load_config(path, seed=None, output=None, override_cfl=False):
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}", code="bad_config_file") from None
        if not isinstance(data, dict):
            raise InvalidArgument("config must be a JSON object", code="bad_config_file")
        # reports embed their resolved config under "config"
        if "config" in data and isinstance(data["config"], dict) and "command" in data:
            data = data["config"]
    if seed is not None:
        data["seed"] = seed
    if output is not None:
        data["output_path"] = output
    if override_cfl:
        data["override_cfl"] = True
    return RunConfig.from_dict(data)


def build_parser():
    parser = argparse.ArgumentParser(prog="bspde", description="Galerkin backward Euler solver for BSPDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
        p.add_argument("--output", help="output path (JSON; CSV written alongside)")
        p.add_argument("--override-cfl", action="store_true",
                       help="allow lambda_n^2 * mesh > 1 (recorded in the report)")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.output, args.override_cfl)
        COMMANDS[args.command](cfg)
    except BspdeError as exc:
        status = EXIT_CONFIG if isinstance(exc, InvalidArgument) else EXIT_SOLVER
        record = {"error": exc.code, "message": str(exc)}
        if getattr(exc, "step", None) is not None:
            record["step"] = exc.step
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return status
    return 0


if __name__ == "__main__":
    sys.exit(main())
