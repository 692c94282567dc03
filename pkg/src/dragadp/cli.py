"""Command-line entry points and the text output formats.

Two commands: ``learn`` runs data collection plus the learning iteration
and writes the gains and the convergence trace; ``compare`` evaluates the
learned policy against the model-based baseline and writes the per-branch
trajectory files and the metrics summary.

Exit codes: 0 success, 2 configuration error, 3 excitation-rank failure,
4 non-convergence, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import sim
from .config import ConfigError, ScenarioConfig, parse_config
from .linops import RankDeficient
from .riccati import ConvergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RANK = 3
EXIT_CONVERGENCE = 4
EXIT_NUMERICAL = 5

OUTPUT_ENV_VAR = "DRAGADP_OUT"

GAINS_HEADER = "# dragadp gains v1"

TRAJECTORY_COLUMNS = ("t_s", "x_km", "y_km", "z_km", "xdot_kms",
                      "ydot_kms", "zdot_kms", "u1", "u2", "u3",
                      "e1_km", "e2_km", "e3_km")


def _fmt(value):
    return f"{value:.17g}"


def write_gains(path, blocks):
    """Write labeled matrix blocks in a plain decimal text format."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(GAINS_HEADER + "\n")
        for name, matrix in blocks.items():
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            handle.write(f"{name} {matrix.shape[0]} {matrix.shape[1]}\n")
            for row in matrix:
                handle.write(" ".join(_fmt(v) for v in row) + "\n")


def read_gains(path):
    """Parse a gains file back into a name -> matrix mapping."""
    blocks = {}
    with open(path, "r", encoding="utf-8") as handle:
        lines = [ln.rstrip("\n") for ln in handle]
    idx = 0
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path} is not a gains file")
    idx += 1
    while idx < len(lines):
        if not lines[idx].strip():
            idx += 1
            continue
        name, rows, cols = lines[idx].split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[idx + 1 + i].split()]
                for i in range(rows)]
        matrix = np.array(data)
        if matrix.shape != (rows, cols):
            raise ValueError(f"block {name} has inconsistent shape")
        blocks[name] = matrix
        idx += 1 + rows
    return blocks


def write_trace_csv(path, schedule, trace):
    """Convergence trace of the learning iteration, one row per step."""
    resets = set(trace.vi.reset_iterations)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("k,epsilon,step_metric,p_norm,resets\n")
        seen = 0
        for k, (metric, norm) in enumerate(zip(trace.vi.metrics,
                                               trace.vi.norms)):
            if k in resets:
                seen += 1
            handle.write(f"{k},{_fmt(schedule.epsilon(k))},{_fmt(metric)},"
                         f"{_fmt(norm)},{seen}\n")


def write_trajectory_csv(path, traj, stride=1):
    """Fixed-order trajectory columns at full double precision."""
    idx = np.arange(0, traj.times.size, stride)
    if idx[-1] != traj.times.size - 1:
        idx = np.append(idx, traj.times.size - 1)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for i in idx:
            row = [traj.times[i], *traj.x[i], *traj.u[i], *traj.e[i]]
            handle.write(",".join(_fmt(v) for v in row) + "\n")


def write_metrics_csv(path, named_metrics):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("branch,j_cost,terminal_error_km,settling_time_s,"
                     "settled,max_input\n")
        for name, m in named_metrics.items():
            settle = _fmt(m.settling_time_s) if m.settled else "unsettled"
            handle.write(f"{name},{_fmt(m.j_cost)},"
                         f"{_fmt(m.terminal_error_km)},{settle},"
                         f"{str(m.settled).lower()},{_fmt(m.max_input)}\n")


def _resolve_output_dir(config, override):
    out = override or config.output_dir or os.environ.get(OUTPUT_ENV_VAR) \
        or os.getcwd()
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(path):
    if path is None:
        return ScenarioConfig()
    return parse_config(path)


def _gain_blocks(learned):
    return {"K": learned.k, "L": learned.l, "P": learned.p,
            "X": learned.x, "U": learned.u, "B_hat": learned.b_hat,
            "D_hat": learned.d_hat}


def cmd_learn(config, out_dir=None):
    """Run phases one and two and write gains plus convergence trace."""
    out = _resolve_output_dir(config, out_dir)
    phase = sim.learn_phase(config)
    write_gains(os.path.join(out, "gains.txt"),
                _gain_blocks(phase.learned))
    write_trace_csv(os.path.join(out, "vi_trace.csv"),
                    config.vi_schedule(), phase.learned.trace)
    print(f"learned gains written to {out} "
          f"({phase.learned.trace.vi.iterations} iterations, "
          f"{phase.learned.trace.vi.resets} resets)")
    return EXIT_OK


def cmd_compare(config, gains_path=None, out_dir=None):
    """Evaluate learned vs. model-based gains and write the artifacts."""
    out = _resolve_output_dir(config, out_dir)
    phase = sim.learn_phase(config)
    if gains_path is not None:
        blocks = read_gains(gains_path)
        try:
            k_vi, l_vi = blocks["K"], blocks["L"]
        except KeyError as exc:
            raise ValueError(f"gains file lacks block {exc}") from exc
    else:
        k_vi, l_vi = phase.learned.k, phase.learned.l
    result = sim.evaluate_policies(config, phase, k_vi, l_vi)
    write_trajectory_csv(os.path.join(out, "trajectory_vi.csv"),
                         result.traj_eval_vi, stride=config.output_stride)
    write_trajectory_csv(os.path.join(out, "trajectory_lqr.csv"),
                         result.traj_eval_lqr, stride=config.output_stride)
    write_metrics_csv(os.path.join(out, "metrics_summary.csv"),
                      {"vi": result.metrics_vi, "lqr": result.metrics_lqr})
    print(f"comparison artifacts written to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dragadp",
        description="Learn and evaluate drag-based relative-motion "
                    "tracking gains from trajectory data.")
    sub = parser.add_subparsers(dest="command", required=True)
    learn = sub.add_parser("learn", help="collect data and learn the gains")
    learn.add_argument("-c", "--config", help="scenario file (YAML)")
    learn.add_argument("-o", "--output", help="output directory")
    compare = sub.add_parser(
        "compare", help="evaluate learned gains against the baseline")
    compare.add_argument("-c", "--config", help="scenario file (YAML)")
    compare.add_argument("-o", "--output", help="output directory")
    compare.add_argument("--gains", help="gains file from a previous learn")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command == "learn":
            return cmd_learn(config, out_dir=args.output)
        return cmd_compare(config, gains_path=args.gains,
                           out_dir=args.output)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RankDeficient as exc:
        print(f"excitation rank failure: {exc} "
              f"(rank {exc.rank} of {exc.required})", file=sys.stderr)
        return EXIT_RANK
    except ConvergenceError as exc:
        print(f"learning did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (sim.SimulationDiverged, np.linalg.LinAlgError,
            FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
