"""Command-line front door: run protocols from config documents and write CSV/JSON."""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from .config import ConfigError, config_from_dict, expand_sweeps, read_document
from .errors import AmbiguityError, CapabilityError, DomainError, ModelValidityError, NumericError
from .protocols import CATALOG, run_protocol

DEFAULT_CONFIG = "noon7"

# exit codes
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


class CliFailure(Exception):
    def __init__(self, kind: str, code: int, message: str, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra

    def record(self) -> dict:
        return {"error": self.kind, "message": str(self), **self.extra}


def _fail(err: CliFailure):
    click.echo(json.dumps(_jsonable(err.record())), err=True)
    sys.exit(err.code)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_jsonable(v))
    return str(v)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _resolve(config: str, overrides: list[str], protocol: str | None):
    """Every sweep point validated up front, so bad input never leaves partial output."""
    try:
        doc = read_document(config)
        points = expand_sweeps(doc, overrides)
        cfgs = [(pt, config_from_dict(d)) for pt, d in points]
    except ConfigError as exc:
        raise CliFailure("validation", EXIT_VALIDATION, "invalid configuration", problems=exc.problems) from None
    tag = protocol or cfgs[0][1].default_protocol
    if tag not in CATALOG:
        raise CliFailure("usage", EXIT_USAGE, f"unknown protocol {tag!r}; choose from {sorted(CATALOG)}")
    return tag, cfgs


def _write_outputs(out: Path, files: dict[str, str]):
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        for name, text in files.items():
            (stage / name).write_text(text, encoding="utf-8")
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


@click.group()
@click.version_option(__version__, prog_name="bhtransistor")
def main():
    """Simulate and analyse a quantum-controlled Bose-Hubbard transistor."""


@main.command()
@click.option("--config", "config", default=DEFAULT_CONFIG, show_default=True,
              help="Config file path or packaged preset name.")
@click.option("--protocol", default=None, help="Protocol tag (default: the config's default_protocol).")
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), default=Path("results"),
              show_default=True, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override simulation.seed.")
@click.option("--shots", type=int, default=None, help="Override simulation.shots.")
@click.option("--jobs", type=int, default=None, help="Worker processes for independent shots.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Dotted-path override; a list value sweeps (cross product over several).")
def run(config, protocol, out, seed, shots, jobs, sets):
    """Run one protocol and write results.csv, spectrum.csv and meta.json."""
    overrides = list(sets)
    for key, val in (("simulation.seed", seed), ("simulation.shots", shots), ("simulation.jobs", jobs)):
        if val is not None:
            overrides.append(f"{key}={val}")
    t0 = time.perf_counter()
    try:
        tag, cfgs = _resolve(config, overrides, protocol)
        sweep_keys = list(cfgs[0][0])
        rows, spec_rows, columns, spec_columns, points = [], [], None, None, []
        for pt, cfg in cfgs:
            res = run_protocol(cfg, tag)
            table = res.table()
            columns = sweep_keys + table.columns
            prefix = [pt[k] for k in sweep_keys]
            rows += [prefix + list(r) for r in table.rows]
            if hasattr(res, "spectrum_table"):
                st = res.spectrum_table()
                spec_columns = sweep_keys + st.columns
                spec_rows += [prefix + list(r) for r in st.rows]
            points.append({"point": pt, "summary": res.summary(), "config": cfg.to_dict()})
    except CliFailure as exc:
        _fail(exc)
    except (DomainError, NumericError, CapabilityError, ModelValidityError, AmbiguityError) as exc:
        _fail(CliFailure(type(exc).__name__, EXIT_RUNTIME, str(exc)))
    meta = {
        "protocol": tag,
        "config_source": str(config),
        "overrides": overrides,
        "seed": cfgs[0][1].simulation.seed,
        "points": points,
        "versions": {
            "bhtransistor": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": time.perf_counter() - t0,
    }
    files = {"results.csv": _csv_text(columns, rows)}
    if spec_columns is not None:
        files["spectrum.csv"] = _csv_text(spec_columns, spec_rows)
    files["meta.json"] = json.dumps(_jsonable(meta), indent=2) + "\n"
    try:
        _write_outputs(out, files)
    except OSError as exc:
        _fail(CliFailure("io", EXIT_RUNTIME, f"cannot write to {out}: {exc}"))
    for w in sorted({w for p in points for w in p["summary"].get("warnings", [])}):
        click.echo(f"warning: {w}", err=True)
    click.echo(f"{tag}: {len(rows)} rows -> {out}")


@main.command("list-protocols")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def list_protocols(as_json):
    """List the available protocols."""
    entries = [
        {"tag": tag, "description": CATALOG[tag][0], "fields": list(CATALOG[tag][1])}
        for tag in sorted(CATALOG)
    ]
    if as_json:
        click.echo(json.dumps({"protocols": entries}, indent=2))
        return
    for e in entries:
        click.echo(f"{e['tag']:<22} {e['description']}")
        click.echo(f"{'':<22} fields: {', '.join(e['fields'])}")


if __name__ == "__main__":  # pragma: no cover
    main()
