"""Analysis report assembly: a versioned JSON document plus CSV artifacts.

The report gathers every number the analysis produced (model summary,
interaction test, cut-off report, net gain, calibration) together with an
input fingerprint so results can be traced back to the exact file that
produced them.  The JSON validates against the schema shipped with the
package.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources

import numpy as np

SCHEMA_VERSION = 1


def _schema() -> dict:
    with resources.files("predmark").joinpath("data/report_schema.json").open(
        "r", encoding="utf-8"
    ) as fh:
        return json.load(fh)


def fingerprint_file(path) -> dict:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        n_rows = sum(1 for _ in fh)
    return {
        "path": str(path),
        "sha256": digest.hexdigest(),
        "n_rows": n_rows,
        "columns": header.split(","),
    }


def model_summary(model, interaction) -> dict:
    return {
        "family": model.family,
        "columns": list(model.design.columns),
        "beta": model.beta.tolist(),
        "se_model": np.sqrt(np.diag(model.cov_model)).tolist(),
        "se_robust": (
            None if model.cov_robust is None
            else np.sqrt(np.diag(model.cov_robust)).tolist()
        ),
        "converged": model.convergence.converged,
        "iterations": model.convergence.iterations,
        "interaction": {
            "estimate": interaction.estimate,
            "se": interaction.se,
            "z": interaction.z,
            "p": interaction.p,
        },
    }


def build_report(
    *,
    fingerprint: dict,
    model: dict,
    cutoffs: dict,
    netgain: dict,
    calibration: dict | None,
    landmark: float | None,
    seed: int | None,
    files: dict,
) -> dict:
    from . import __version__

    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "seed": seed,
        "input": fingerprint,
        "model": model,
        "landmark": landmark,
        "cutoffs": cutoffs,
        "net_gain": netgain,
        "calibration": calibration,
        "files": files,
    }
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, _schema())


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, allow_nan=True)


def error_json(exc: Exception, exit_code: int) -> str:
    return json.dumps({
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": exit_code,
    })
