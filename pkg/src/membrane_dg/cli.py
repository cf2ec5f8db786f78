"""Command-line entry point.

Examples
--------
::

    membrane-dg --experiment convergence --degree 1 --levels 5 --out results
    membrane-dg --experiment advection --out vtk
    membrane-dg --experiment custom --config run.json --out custom
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger("membrane_dg")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    degree: int = 1
    levels: int = 5
    dt: float = 5e-4
    t_final: float = 1.0
    sigma: float = 10.0
    theta: float = 0.5
    interface: str = "explicit"
    out: str = "out"
    solver: str = "lu"
    threads: int = 1
    config: str | None = None
    nx: tuple[int, ...] = (16, 64)

    def __post_init__(self):
        if self.experiment not in ("convergence", "advection", "custom"):
            raise UsageError(f"unknown experiment {self.experiment!r}")
        for name in ("degree", "levels", "threads"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name} must be a positive integer")
        for name in ("dt", "sigma"):
            if not getattr(self, name) > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if not self.t_final >= 0:
            raise UsageError("--t-final must be non-negative")
        if not 0.0 <= self.theta <= 1.0:
            raise UsageError("--theta must lie in [0, 1]")
        if any(n < 2 or n % 2 for n in self.nx):
            raise UsageError("--nx values must be even and at least 2")
        if self.experiment == "custom" and not self.config:
            raise UsageError("--experiment custom requires --config FILE")

    def digest(self) -> str:
        """Stable hash of all fields."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="membrane-dg",
                description="IPDG solver for two-compartment advection-diffusion-reaction "
                            "systems coupled through a semi-permeable membrane.")
    p.add_argument("--experiment", required=True, choices=("convergence", "advection", "custom"))
    p.add_argument("--degree", type=int, default=1, help="polynomial degree m")
    p.add_argument("--levels", type=int, default=5, help="refinement levels, from 2x2")
    p.add_argument("--dt", type=float, default=5e-4, help="time step k")
    p.add_argument("--t-final", type=float, default=None,
                   help="final time (1 for convergence, 2 for advection)")
    p.add_argument("--sigma", type=float, default=10.0, help="penalty constant C_sigma")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--interface", choices=("explicit", "implicit"), default="explicit",
                   help="treat the linear interface terms explicitly or implicitly")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--solver", choices=("lu", "gmres"), default="lu")
    p.add_argument("--threads", type=int, default=1, help="parallel convergence levels")
    p.add_argument("--config", help="JSON run configuration (custom experiment)")
    p.add_argument("--nx", type=int, nargs="+", default=None,
                   help="mesh sizes for the advection run (default 16 64)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_cli(args=None) -> RunConfig:
    ns = build_parser().parse_args(args)
    t_final = ns.t_final
    dt = ns.dt
    if t_final is None:
        t_final = 2.0 if ns.experiment == "advection" else 1.0
    if ns.experiment == "advection" and "--dt" not in (args or sys.argv[1:]):
        dt = 1e-3
    return RunConfig(experiment=ns.experiment, degree=ns.degree, levels=ns.levels, dt=dt,
                     t_final=t_final, sigma=ns.sigma, theta=ns.theta, interface=ns.interface,
                     out=ns.out, solver=ns.solver, threads=ns.threads, config=ns.config,
                     nx=tuple(ns.nx) if ns.nx else (16, 64))


# -- custom runs ----------------------------------------------------------------------


def load_custom_problem(path):
    """Build a constant-coefficient problem from a JSON file.

    Recognised keys (defaults in brackets): ``n_components`` [1],
    ``diffusion`` [1 per component], ``advection`` [zero rows],
    ``permeability`` [identity], ``weights1`` [0.5], ``friction`` [1],
    ``boundary`` ["neumann" or "dirichlet"], ``initial`` with ``center``,
    ``width`` and ``amplitude`` of a Gaussian, ``nx`` [16].
    """
    from .interface import InterfaceModel
    from .problem import BoundarySpec, ProblemDefinition, constant_field

    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    n = int(cfg.get("n_components", 1))
    diff = cfg.get("diffusion", [1.0] * n)
    adv = cfg.get("advection", [[0.0, 0.0]] * n)
    perm = np.asarray(cfg.get("permeability", np.eye(n)), float).reshape(n, n)
    w1 = cfg.get("weights1", [0.5] * n)
    w1 = [w1] * n if np.isscalar(w1) else w1
    fr = cfg.get("friction", [1.0] * n)
    fr = [fr] * n if np.isscalar(fr) else fr
    init = cfg.get("initial", {})
    cx, cy = init.get("center", [-0.5, 0.0])
    width = float(init.get("width", 8.0))
    amp = np.broadcast_to(np.asarray(init.get("amplitude", 1.0), float), (n,))

    def u0(t, x, y, sub):
        g = np.exp(-width * ((x - cx) ** 2 + (y - cy) ** 2))
        return amp[:, None] * g[None]

    bnd = cfg.get("boundary", "neumann")
    if bnd not in ("neumann", "dirichlet"):
        raise UsageError("boundary must be 'neumann' or 'dirichlet'")
    boundary = BoundarySpec.all_neumann(n) if bnd == "neumann" else BoundarySpec.all_dirichlet(n)
    try:
        model = InterfaceModel(n_components=n, weights1=list(w1),
                               weights2=[1.0 - w for w in w1], friction=list(fr),
                               permeability=perm)
        pb = ProblemDefinition(n_components=n, diffusion=constant_field(diff),
                               advection=constant_field(adv), reaction=None, initial=u0,
                               boundary=boundary, interface=model,
                               advection_divergence=constant_field([0.0] * n), name="custom")
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    return pb, int(cfg.get("nx", 16))


# -- drivers --------------------------------------------------------------------------


def _run_convergence(cfg: RunConfig, out: Path) -> None:
    from .harness import run_convergence_study
    from .io import write_csv

    table = run_convergence_study(cfg.degree, cfg.levels, cfg.dt, cfg.sigma, cfg.t_final,
                                  cfg.theta, cfg.interface, cfg.solver, threads=cfg.threads)
    write_csv(table, out / f"convergence_m{cfg.degree}.csv")
    text = table.to_text()
    (out / f"convergence_m{cfg.degree}.txt").write_text(text + "\n")
    print(text)


def _run_advection(cfg: RunConfig, out: Path) -> int:
    from .harness import run_advection_study

    reports = run_advection_study(cfg.nx, cfg.degree, cfg.dt, cfg.t_final, cfg.sigma,
                                  out_dir=out, interface=cfg.interface)
    status = 0
    for r in reports:
        layer = "n/a" if r.layer_means is None else \
            f"{r.layer_means[0]:.4f} vs {r.layer_means[1]:.4f}"
        print(f"{r.nx}x{r.nx}: finite={r.finite} max|u|={r.max_norm:.4f} "
              f"(|u0|={r.initial_max:.4f}, bounded={r.bounded}) layer strips {layer}")
        for t, j in r.jump_history:
            print(f"    t={t:.2f} max interface jump {j:.4e}")
        status |= not r.bounded
    return int(status)


def _run_custom(cfg: RunConfig, out: Path) -> None:
    from .experiments import DOMAIN
    from .fespace import DGSpace
    from .io import write_vtk
    from .mesh import build_structured_mesh
    from .operators import Discretization
    from .stepper import SchemeConfig, integrate

    pb, nx = load_custom_problem(cfg.config)
    space = DGSpace(build_structured_mesh(DOMAIN, nx), cfg.degree, pb.n_components)
    disc = Discretization(space, pb, cfg.sigma)
    scheme = SchemeConfig(dt=cfg.dt, t_final=cfg.t_final, theta=cfg.theta,
                          interface=cfg.interface, solver=cfg.solver)
    traj = integrate(disc, scheme)
    write_vtk(space, traj.U, out / "custom_final.vtk", title=f"custom t={traj.t:g}")
    print(f"custom run: {traj.n_steps} steps, final t={traj.t:g}")


def main(argv=None) -> int:
    try:
        cfg = parse_cli(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"membrane-dg: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if "-v" in (argv or sys.argv[1:]) or
                        "--verbose" in (argv or sys.argv[1:]) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.json").write_text(
            json.dumps(dict(dataclasses.asdict(cfg), hash=cfg.digest()), indent=2) + "\n")
        if cfg.experiment == "convergence":
            _run_convergence(cfg, out)
        elif cfg.experiment == "advection":
            return _run_advection(cfg, out)
        else:
            _run_custom(cfg, out)
    except UsageError as exc:
        print(f"membrane-dg: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"membrane-dg: run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
