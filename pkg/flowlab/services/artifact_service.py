"""
CSV and JSON artifacts of an experiment run

Every file carries the config digest and the tool version: CSV files in
'#'-prefixed header lines (read back with pandas.read_csv(comment='#')),
JSON files as top-level keys.
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .. import __version__

logger = logging.getLogger(__name__)

LINE_TERMINATOR = "\r\n"


def output_directory(root, name, digest):
    """
    Directory for one experiment's artifacts, created on demand

    Args:
        root: Output root
        name: Experiment name
        digest: Config digest; its first 12 characters tag the directory

    Returns:
        Path: The directory
    """
    path = Path(root) / f"{name}-{digest[:12]}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _header(digest, extra=None):
    lines = [f"# config_digest: {digest}", f"# flowlab_version: {__version__}"]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    return LINE_TERMINATOR.join(lines) + LINE_TERMINATOR


def write_csv(frame, path, digest, extra=None):
    """
    Write a DataFrame as RFC-4180 CSV below a comment header

    Returns:
        Path: Written file
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(_header(digest, extra))
        frame.to_csv(handle, index=False, lineterminator=LINE_TERMINATOR, float_format="%.17g")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(data, path, digest):
    path = Path(path)
    payload = {"config_digest": digest, "flowlab_version": __version__, **data}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


def write_report(report, directory):
    """report.json of a DiagnosticsReport"""
    path = Path(directory) / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote report with {len(report.entries)} checks to {path}")
    return path


def trajectories_frame(trajectories):
    """Tidy frame: particle, t, x_1..x_d, v_1..v_d, J"""
    frames = []
    for index, trajectory in enumerate(trajectories):
        d = trajectory.positions.shape[1]
        data = {"particle": index, "t": trajectory.times}
        for axis in range(d):
            data[f"x_{axis + 1}"] = trajectory.positions[:, axis]
        for axis in range(d):
            data[f"v_{axis + 1}"] = trajectory.velocities[:, axis]
        data["J"] = np.exp(trajectory.log_jacobian) if trajectory.log_jacobian is not None else np.nan
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def trajectory_metadata(trajectories):
    return [
        {
            "particle": index,
            "initial_point": trajectory.initial_point.tolist(),
            "start_time": trajectory.start_time,
            "termination": trajectory.termination,
            "t_max_estimate": trajectory.t_max_estimate,
            "path_length": trajectory.path_length,
            "samples": int(len(trajectory.times)),
            "hitting": [
                {"level": record.level, "hit_time": record.hit_time,
                 "exit_point": None if record.exit_point is None else list(map(float, record.exit_point))}
                for record in trajectory.hitting
            ],
        }
        for index, trajectory in enumerate(trajectories)
    ]


def write_trajectories(trajectories, directory, digest):
    """
    trajectories.csv plus a trajectories.json sidecar with termination metadata

    Returns:
        list: Written paths
    """
    directory = Path(directory)
    csv_path = write_csv(trajectories_frame(trajectories), directory / "trajectories.csv", digest)
    sidecar = write_json({"trajectories": trajectory_metadata(trajectories)}, directory / "trajectories.json", digest)
    return [csv_path, sidecar]


def write_densities(estimates, directory, digest):
    """densities.csv: one block of grid cells per measured time"""
    frames = [estimate.to_frame() for estimate in estimates]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["t", "cell", "mass", "density"])
    return write_csv(frame, Path(directory) / "densities.csv", digest)


def write_functionals(functionals, directory, digest):
    """functionals.csv: t, integrand, cumulative growth, log moment"""
    return write_csv(functionals.to_frame(), Path(directory) / "functionals.csv", digest)


def write_table(rows, directory, name, digest):
    """Generic tidy table from a list of row dicts"""
    return write_csv(pd.DataFrame(rows), Path(directory) / name, digest)
