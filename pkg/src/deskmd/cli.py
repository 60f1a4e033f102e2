"""Command-line entry point: minimize, nvt, md, dock, bench, analyze.

Exit status is 0 on success, 1 for usage errors and 2 for runtime
errors. Every run writes ``run.log`` with the resolved configuration
into ``--out``; all other outputs are deterministic for a given seed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    amdahl_fit,
    compute_scaling,
    group_records,
    measure,
    read_csv,
    write_amdahl_log,
    write_csv,
)
from .core import MolecularSystem, assign_parameters, parse_parameters, read_structure, write_structure
from .docking import DockingJob, dock, poses_csv, ranked_csv, select_top_k
from .mdsim import (
    EMSettings,
    SimState,
    Stage,
    ThermoSettings,
    maxwell_boltzmann,
    run_stage,
    steepest_descent_minimize,
    trajectory_csv,
)
from .plots import emit_plot
from .potential import PotentialParams
from .systems import lattice_fluid, random_gas, synthetic_ligand, synthetic_receptor
from .workers import WORKERS_ENV, WorkerPoolConfig, host_parallelism, resolve_workers

log = logging.getLogger("deskmd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _vec3(text: str) -> tuple[float, float, float]:
    try:
        x, y, z = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z in nm, got {text!r}") from None
    return x, y, z


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=42, help="seed for every random choice (default: 42)")
    common.add_argument("--no-deterministic", dest="deterministic", action="store_false",
                        help="allow unordered force reduction (results may differ in the last bits)")
    common.add_argument("--params", type=Path, help="parameter file (selector.field = value)")
    common.add_argument("--cutoff", type=float, default=1.0, help="pair cutoff in nm (default: 1.0)")
    common.add_argument("-v", "--verbose", action="store_true")

    single = _Parser(add_help=False)
    single.add_argument("--workers", type=_positive_int, default=None,
                        help=f"worker count (default: ${WORKERS_ENV} or 1)")

    structure = _Parser(add_help=False)
    src = structure.add_mutually_exclusive_group()
    src.add_argument("--input", type=Path, help="structure file (.pdb or .xyz)")
    src.add_argument("--fluid", type=_positive_int, metavar="N", help="generate an N-atom argon lattice fluid")
    src.add_argument("--gas", type=_positive_int, metavar="N", help="generate N randomly placed argon atoms")
    structure.add_argument("--format", choices=("pdb", "xyz"), help="structure format (default: file extension)")
    structure.add_argument("--box", type=float, help="cubic box length in nm for generated or box-less inputs")

    dynamics = _Parser(add_help=False)
    dynamics.add_argument("--steps", type=int, default=5000)
    dynamics.add_argument("--dt", type=float, default=0.002, help="time step in ps (default: 0.002)")
    dynamics.add_argument("--tref", type=float, default=300.0, help="reference temperature in K")
    dynamics.add_argument("--tau", type=float, default=0.1, help="thermostat coupling time in ps")
    dynamics.add_argument("--stride", type=_positive_int, default=100, help="summary row interval in steps")
    dynamics.add_argument("--com-interval", type=int, default=100, help="COM removal interval (0 = off)")
    dynamics.add_argument("--state", type=Path, help="directory with final.xyz + velocities.csv from a prior stage")

    parser = _Parser(prog="deskmd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"deskmd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("minimize", parents=[common, single, structure], help="steepest-descent energy minimization")
    p.add_argument("--fmax", type=float, default=1000.0, help="force tolerance in kJ/mol/nm")
    p.add_argument("--max-steps", type=_positive_int, default=50000)
    p.add_argument("--initial-step", type=float, default=0.01, help="initial step in nm")

    p = sub.add_parser("nvt", parents=[common, single, structure, dynamics], help="NVT equilibration")
    p = sub.add_parser("md", parents=[common, single, structure, dynamics], help="production MD")
    p.add_argument("--nve", action="store_true", help="disable the thermostat")
    p.add_argument("--pcoupl", help="pressure coupling scheme (unsupported; always an error)")

    p = sub.add_parser("dock", parents=[common, single], help="rigid-body docking run")
    _dock_inputs(p)
    p.add_argument("--n", type=_positive_int, default=100, help="number of conformers")
    p.add_argument("--top", type=_positive_int, default=10, help="poses kept in ranked.csv")

    bench = sub.add_parser("bench", help="worker x workload timing sweeps")
    bsub = bench.add_subparsers(dest="target", required=True, parser_class=_Parser)
    p = bsub.add_parser("dock", parents=[common], help="docking sweep")
    _dock_inputs(p)
    _sweep_args(p, default_n="10,100,500")
    p = bsub.add_parser("md", parents=[common], help="EM/NVT/MD stage sweep on an argon fluid")
    p.add_argument("--atoms", type=_positive_int, default=256, help="fluid size (default: 256)")
    p.add_argument("--box", type=float, default=None, help="box length in nm (default: liquid-like density)")
    p.add_argument("--stages", default="EM,NVT,MD", help="comma-separated subset of EM,NVT,MD")
    _sweep_args(p, default_n="100")

    p = sub.add_parser("analyze", parents=[common], help="scaling table, Amdahl fit and plots")
    p.add_argument("--csv", type=Path, required=True, help="raw benchmark CSV")
    p.add_argument("--amdahl", action="store_true", help="fit Amdahl's law per stage/workload")
    p.add_argument("--plots", action="store_true", help="write SVG plots")
    return parser


def _dock_inputs(p):
    p.add_argument("--receptor", type=Path, help="receptor structure (default: synthetic pocket)")
    p.add_argument("--ligand", type=Path, help="ligand structure (default: synthetic ligand)")
    p.add_argument("--format", choices=("pdb", "xyz"), help="structure format (default: file extension)")
    p.add_argument("--receptor-atoms", type=_positive_int, default=300, help="size of the synthetic receptor")
    p.add_argument("--pocket-center", type=_vec3, help="x,y,z in nm (default: receptor centroid)")
    p.add_argument("--pocket-radius", type=float, default=1.5, help="nm (default: 1.5)")
    p.add_argument("--no-electrostatics", dest="electrostatics", action="store_false",
                   help="score with Lennard-Jones only")


def _sweep_args(p, default_n):
    p.add_argument("--n", type=_int_list, default=_int_list(default_n),
                   help=f"comma-separated workloads (default: {default_n})")
    p.add_argument("--workers", type=_int_list, default=None,
                   help=f"comma-separated worker counts (default: ${WORKERS_ENV} or 1,2,4,8)")
    p.add_argument("--reps", type=_positive_int, default=5)
    p.add_argument("--warmup", type=int, default=1)


# -- helpers ------------------------------------------------------------------

class RunLog:
    def __init__(self, args, argv):
        self.lines = [
            f"# deskmd {__version__} run log",
            f"started = {_dt.datetime.now().isoformat(timespec='seconds')}",
            f"argv = {' '.join(argv)}",
            f"python = {platform.python_version()}",
            f"host_parallelism = {host_parallelism()}",
        ]
        for key, value in sorted(vars(args).items()):
            self.lines.append(f"config.{key} = {value}")

    def add(self, key, value):
        self.lines.append(f"{key} = {value}")

    def write(self, out: Path):
        self.add("finished", _dt.datetime.now().isoformat(timespec="seconds"))
        (out / "run.log").write_text("\n".join(self.lines) + "\n")


def _params_table(args):
    if args.params is None:
        return None
    if not args.params.exists():
        raise FileNotFoundError(f"parameter file not found: {args.params}")
    return parse_parameters(args.params.read_text())


def _load(path: Path, fmt: str | None, table) -> MolecularSystem:
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return assign_parameters(read_structure(path, fmt), table)


def _load_system(args, default_fluid: int | None) -> MolecularSystem:
    table = _params_table(args)
    state_dir = getattr(args, "state", None)
    if state_dir is not None:
        system = _load(state_dir / "final.xyz", "xyz", table)
    elif args.input is not None:
        system = _load(args.input, args.format, table)
    elif args.gas is not None:
        system = random_gas(args.gas, args.box or 3.0, seed=args.seed)
    elif args.fluid is not None or default_fluid is not None:
        n = args.fluid or default_fluid
        system = lattice_fluid(n, args.box or 2.2, seed=args.seed)
    else:
        raise UsageError("one of --input, --fluid or --gas is required")
    if args.box is not None and system.box_length is None:
        system = system.with_box(args.box)
    if table is not None and args.input is None and state_dir is None:
        system = assign_parameters(system, table)
    return system


def _pot(args, system: MolecularSystem | None, electrostatics: bool = True) -> PotentialParams:
    periodic = system is not None and system.box_length is not None
    return PotentialParams(cutoff=args.cutoff, periodic=periodic, electrostatics=electrostatics)


def _velocities_csv(v: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "vx_nm_ps", "vy_nm_ps", "vz_nm_ps"))
    for i, row in enumerate(v):
        w.writerow([i] + [repr(float(c)) for c in row])
    return buf.getvalue()


def _read_velocities(path: Path, n: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"velocity file not found: {path}")
    rows = list(csv.reader(io.StringIO(path.read_text())))[1:]
    v = np.array([[float(c) for c in r[1:4]] for r in rows if r])
    if v.shape != (n, 3):
        raise ValueError(f"{path}: expected {n} velocity rows, found {len(v)}")
    return v


def _dock_job(args, n: int) -> DockingJob:
    table = _params_table(args)
    if args.receptor is not None:
        receptor = _load(args.receptor, args.format, table)
    else:
        receptor = synthetic_receptor(args.receptor_atoms, seed=args.seed)
    if args.ligand is not None:
        ligand = _load(args.ligand, args.format, table)
    else:
        ligand = synthetic_ligand(seed=args.seed + 1)
    return DockingJob(
        receptor=receptor.with_box(None), ligand=ligand.with_box(None), n_conformers=n, seed=args.seed,
        pocket_center=args.pocket_center, pocket_radius=args.pocket_radius,
        pot=PotentialParams(cutoff=args.cutoff, periodic=False, electrostatics=args.electrostatics),
        electrostatics_on=args.electrostatics,
    )


# -- subcommands ----------------------------------------------------------------

def cmd_minimize(args, runlog: RunLog):
    system = _load_system(args, default_fluid=None)
    workers = resolve_workers(args.workers)
    cfg = WorkerPoolConfig(workers, args.deterministic, backend="thread")
    em = EMSettings(fmax_tol=args.fmax, max_steps=args.max_steps, initial_step=args.initial_step)
    minimized, report = steepest_descent_minimize(system, _pot(args, system), em, cfg=cfg)
    (args.out / "minimized.xyz").write_text(write_structure(minimized))
    (args.out / "em_energies.csv").write_text(
        "accepted_step,epot_kjmol\n" + "".join(f"{i},{e!r}\n" for i, e in enumerate(report.energy_trace)))
    runlog.add("workers", workers)
    _log_report(runlog, report)
    print(f"EM {report.status.value}: {report.steps_taken} steps, E = {report.final_energy:.6g} kJ/mol, "
          f"F_max = {report.final_fmax:.6g} kJ/mol/nm")


def cmd_dynamics(args, runlog: RunLog):
    stage = Stage.NVT if args.command == "nvt" else Stage.MD
    system = _load_system(args, default_fluid=64)
    workers = resolve_workers(args.workers)
    cfg = WorkerPoolConfig(workers, args.deterministic, backend="thread")
    thermo = ThermoSettings(t_ref=args.tref, tau=args.tau, dt=args.dt, n_steps=args.steps,
                            remove_com_interval=args.com_interval)
    if args.state is not None:
        v = _read_velocities(args.state / "velocities.csv", len(system))
    else:
        v = maxwell_boltzmann(system.masses, args.tref, args.seed, remove_com=args.com_interval > 0)
    state = SimState.from_system(system, v)
    thermostat_on = not getattr(args, "nve", False)
    state, report, rows = run_stage(system, state, stage, thermo, _pot(args, system), thermostat_on,
                                    cfg=cfg, stride=args.stride, pressure_coupling=getattr(args, "pcoupl", None))
    (args.out / "trajectory.csv").write_text(trajectory_csv(rows))
    (args.out / "final.xyz").write_text(write_structure(system.with_positions(state.positions)))
    (args.out / "velocities.csv").write_text(_velocities_csv(state.velocities))
    runlog.add("workers", workers)
    _log_report(runlog, report)
    print(f"{stage.value} completed: {report.steps_taken} steps, <T> (last half) = "
          f"{report.mean_temperature if report.mean_temperature is not None else float('nan'):.2f} K")


def _log_report(runlog: RunLog, report):
    for key in ("stage", "status", "steps_taken", "accepted_steps", "final_energy", "final_fmax",
                "mean_temperature", "wall_seconds"):
        value = getattr(report, key)
        runlog.add(f"report.{key}", getattr(value, "value", value))


def cmd_dock(args, runlog: RunLog):
    job = _dock_job(args, args.n)
    workers = resolve_workers(args.workers)
    mode = "sequential" if workers == 1 else "parallel"
    result = dock(job, workers, mode)
    ranked, truncated = select_top_k(result.poses, args.top)
    (args.out / "poses.csv").write_text(poses_csv(result.poses))
    (args.out / "ranked.csv").write_text(ranked_csv(ranked))
    for key, value in (("receptor_atoms", len(job.receptor)), ("ligand_atoms", len(job.ligand)),
                       ("seed", job.seed), ("n_conformers", job.n_conformers), ("workers", workers),
                       ("mode", mode), ("pocket_center", job.pocket_center),
                       ("pocket_radius", job.pocket_radius), ("electrostatics", job.electrostatics_on),
                       ("clash_count", result.clashes), ("top_k_truncated", truncated),
                       ("wall_seconds", result.wall_seconds)):
        runlog.add(key, value)
    best = ranked[0]
    print(f"docked {job.n_conformers} conformers with {workers} worker(s) in {result.wall_seconds:.3f} s; "
          f"best conformer {best.conformer_index} score {best.score:.4f} kJ/mol; clashes {result.clashes}")


def _sweep_workers(args) -> list[int]:
    if args.workers is not None:
        return args.workers
    env = resolve_workers(None) if WORKERS_ENV in os.environ else None
    return [env] if env else [1, 2, 4, 8]


def cmd_bench(args, runlog: RunLog):
    worker_list = _sweep_workers(args)
    if 1 not in worker_list:
        log.warning("worker list lacks 1; analyze needs a p=1 baseline")
    records = []
    if args.target == "dock":
        for n in args.n:
            job = _dock_job(args, n)
            for p in worker_list:
                mode = "sequential" if p == 1 else "parallel"
                records += measure(lambda: dock(job, p, mode).scores, args.reps, args.warmup,
                                   stage="DOCK", workload=n, workers=p)
                log.info("DOCK n=%d p=%d done", n, p)
    else:
        stages = [s.strip().upper() for s in args.stages.split(",") if s.strip()]
        if not stages or any(s not in ("EM", "NVT", "MD") for s in stages):
            raise UsageError(f"--stages must be a subset of EM,NVT,MD, got {args.stages!r}")
        box = args.box or _liquid_box(args.atoms)
        system = lattice_fluid(args.atoms, box, seed=args.seed)
        pot = PotentialParams(cutoff=args.cutoff, periodic=True)
        v0 = maxwell_boltzmann(system.masses, 300.0, args.seed)
        for stage in stages:
            for n in args.n:
                for p in worker_list:
                    cfg = WorkerPoolConfig(p, args.deterministic, backend="thread")
                    runner = _md_runner(stage, system, v0, pot, n, cfg)
                    records += measure(runner, args.reps, args.warmup, stage=stage, workload=n, workers=p)
                    log.info("%s n=%d p=%d done", stage, n, p)
    (args.out / "raw.csv").write_text(write_csv(records))
    runlog.add("records", len(records))
    runlog.add("worker_list", worker_list)
    print(f"wrote {len(records)} records to {args.out / 'raw.csv'}")


def _liquid_box(n_atoms: int) -> float:
    # ~21 atoms/nm^3 (liquid argon), but never below what the cutoff needs
    return max((n_atoms / 21.0) ** (1 / 3), 2.2)


def _md_runner(stage, system, v0, pot, n_steps, cfg):
    if stage == "EM":
        em = EMSettings(fmax_tol=0.0, max_steps=n_steps)

        def run():
            _, report = steepest_descent_minimize(system, pot, em, cfg=cfg)
            return report.final_energy
        return run

    thermo = ThermoSettings(n_steps=n_steps)

    def run():
        state, report, _ = run_stage(system, SimState.from_system(system, v0), stage, thermo, pot,
                                     True, cfg=cfg)
        return report.final_energy, state.positions.tobytes()
    return run


def cmd_analyze(args, runlog: RunLog):
    if not args.csv.exists():
        raise FileNotFoundError(f"benchmark CSV not found: {args.csv}")
    records = read_csv(args.csv.read_text())
    if records and not hasattr(records[0], "repetition"):
        raise ValueError(f"{args.csv} is a scaling table; analyze expects raw records")
    groups = group_records(records)
    if not groups:
        raise ValueError(f"{args.csv} holds no records")
    table = {key: compute_scaling(recs) for key, recs in groups.items()}
    rows = [r for rs in table.values() for r in rs]
    (args.out / "scaling.csv").write_text(write_csv(rows))
    written = ["scaling.csv"]
    if args.amdahl:
        fits = {key: amdahl_fit(rs) for key, rs in table.items() if len({r.workers for r in rs}) >= 2}
        (args.out / "amdahl.log").write_text(write_amdahl_log(fits))
        written.append("amdahl.log")
        for (stage, n), fit in fits.items():
            print(f"{stage} n={n}: {fit.summary()}")
    if args.plots:
        written += _analysis_plots(table, args.out)
    runlog.add("outputs", ",".join(written))
    print("wrote " + ", ".join(str(args.out / w) for w in written))


def _analysis_plots(table, out: Path) -> list[str]:
    written = []
    md = {key: rows for key, rows in table.items() if key[0] != "DOCK"}
    if md:
        workloads = {n for _, n in md}
        labelled = {(s if len(workloads) == 1 else f"{s} n={n}"): rows for (s, n), rows in md.items()}
        for kind in ("walltime", "efficiency"):
            emit_plot(labelled, kind, out / f"{kind}.svg")
            written.append(f"{kind}.svg")
    dock_rows = {key: rows for key, rows in table.items() if key[0] == "DOCK"}
    if dock_rows:
        emit_plot([r for rows in dock_rows.values() for r in rows], "docking-time", out / "docking-time.svg")
        emit_plot({f"n={n}": rows for (_, n), rows in dock_rows.items()}, "speedup", out / "speedup.svg")
        written += ["docking-time.svg", "speedup.svg"]
    return written


COMMANDS = {
    "minimize": cmd_minimize,
    "nvt": cmd_dynamics,
    "md": cmd_dynamics,
    "dock": cmd_dock,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
}


def run_cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        runlog = RunLog(args, argv)
        try:
            COMMANDS[args.command](args, runlog)
        finally:
            runlog.write(args.out)
    except UsageError as exc:
        print(f"deskmd: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"deskmd: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
