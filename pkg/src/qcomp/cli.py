"""Command-line entry point: ``qcomp run | cdf | curve | oracle``."""

from __future__ import annotations

import json
import logging
import math
import sys
import time
from pathlib import Path

import click

from . import harness
from .quantizer import MAX_BITS, QuantizerError, codebook, format_bits, parse_bits
from .scenario import ConfigError


def _fail(msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log solver warnings.")
def main(verbose):
    """Quantization-aware coordinated beamforming simulator."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("spec_file", required=False, type=click.Path(dir_okay=False))
@click.option("--preset", type=click.Choice(sorted(harness.PRESETS)),
              help="Use a named experiment instead of a spec file.")
@click.option("--seed", type=int, help="Override the master seed.")
@click.option("--drops", type=int, help="Override the number of drops.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              help="Output directory (default: the spec's output_dir).")
def run(spec_file, preset, seed, drops, workers, out_dir):
    """Run an experiment and write <name>.csv and <name>.json."""
    if (spec_file is None) == (preset is None):
        _fail("give exactly one of SPEC_FILE or --preset")
    if workers < 1:
        _fail("--workers must be >= 1")
    try:
        spec = harness.PRESETS[preset] if preset else harness.load_spec(spec_file)
        overrides = {}
        if seed is not None:
            overrides["master_seed"] = seed
        if drops is not None:
            overrides["n_drops"] = drops
        if out_dir is not None:
            overrides["output_dir"] = out_dir
        if overrides:
            spec = spec.replace(**overrides)
    except (ConfigError, QuantizerError, TypeError, OSError) as e:
        _fail(str(e))
    t0 = time.perf_counter()
    records = harness.run_experiment(spec, workers=workers)
    elapsed = time.perf_counter() - t0
    out = Path(spec.output_dir)
    csv_path, meta_path = out / f"{spec.name}.csv", out / f"{spec.name}.json"
    try:
        harness.write_records(records, csv_path)
        harness.write_metadata(spec, records, meta_path, elapsed)
    except OSError as e:
        _fail(f"cannot write output: {e}")
    n_bad = sum(not r.converged for r in records)
    click.echo(f"{len(records)} trials ({n_bad} not converged) in {elapsed:.1f} s -> {csv_path}")


def _load(csv_file, method, bits, target):
    try:
        recs = harness.read_records(csv_file)
    except (OSError, KeyError, ValueError) as e:
        _fail(f"cannot read {csv_file}: {e}")
    if method:
        recs = [r for r in recs if r.method == method]
    if bits is not None:
        try:
            b = parse_bits(bits)
        except QuantizerError as e:
            _fail(str(e))
        recs = [r for r in recs if r.bits == b]
    if target is not None:
        recs = [r for r in recs if math.isclose(r.target_db, target)]
    return recs


@main.command()
@click.argument("csv_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--field", default="dl_sinr_db", show_default=True,
              type=click.Choice(["dl_sinr_db", "ul_sinr_db", "total_dl_power_dbm",
                                 "total_ul_power_dbm"]))
@click.option("--method", type=click.Choice(harness.METHODS))
@click.option("--bits")
@click.option("--target", type=float, help="Target SINR (dB) to select.")
def cdf(csv_file, field, method, bits, target):
    """Print an empirical CDF as 'value,fraction' lines."""
    recs = _load(csv_file, method, bits, target)
    try:
        x, f = harness.compute_cdf(recs, field)
    except harness.EmptySelection as e:
        _fail(str(e))
    click.echo("value,fraction")
    for a, b in zip(x, f):
        click.echo(f"{float(a)!r},{float(b)!r}")


@main.command()
@click.argument("csv_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--link", type=click.Choice(["dl", "ul"]), default="dl", show_default=True)
@click.option("--method", type=click.Choice(harness.METHODS))
def curve(csv_file, link, method):
    """Print mean total power (dBm) versus target SINR per (bits, method)."""
    recs = _load(csv_file, method, None, None)
    if not recs:
        _fail("no records selected")
    click.echo("method,bits,target_db,mean_power_dbm,n_converged,n_total,diverged")
    for (bits, meth), pts in sorted(harness.power_vs_target_curve(recs, link).items(),
                                    key=lambda kv: (kv[0][1], kv[0][0])):
        for p in pts:
            click.echo(f"{meth},{format_bits(bits)},{p.target_db!r},{p.mean_power_dbm!r},"
                       f"{p.n_converged},{p.n_total},{int(p.diverged)}")


@main.command()
@click.option("--max-bits", type=click.IntRange(1, MAX_BITS), default=8, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit codebooks as JSON.")
def oracle(max_bits, as_json):
    """Print the Lloyd-Max distortion table for a unit Gaussian."""
    if as_json:
        click.echo(json.dumps([json.loads(codebook(b).to_json()) for b in range(1, max_bits + 1)],
                              indent=2))
        return
    click.echo(f"{'bits':>4}  {'beta':>14}  {'alpha':>14}")
    for b in range(1, max_bits + 1):
        beta = codebook(b).distortion
        click.echo(f"{b:>4}  {beta:>14.10f}  {1 - beta:>14.10f}")


if __name__ == "__main__":
    main()
