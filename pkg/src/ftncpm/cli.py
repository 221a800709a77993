"""Command-line entry point: ``ftncpm {ber,rate,bandwidth,psd}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .detection import TrellisTooLarge
from .experiments import (SpecError, emit_results, load_spec, result_to_text, run_bandwidth_table,
                          run_ber_sweep, run_psd, run_rate_sweep)

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftncpm", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_ in [("ber", "BER versus SNR sweep"),
                        ("rate", "information rate and spectral efficiency sweep"),
                        ("bandwidth", "containment bandwidth table"),
                        ("psd", "power spectral density of a waveform")]:
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--spec", type=Path, required=verb != "bandwidth",
                       help="YAML experiment description")
        s.add_argument("--seed", type=int, default=None, help="overrides the seed in the spec")
        s.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    log = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
    try:
        if args.verb == "bandwidth":
            seed = 0 if args.seed is None else args.seed
            result = run_bandwidth_table(seed=seed)
        else:
            spec = load_spec(args.spec).with_seed(args.seed)
            if args.verb == "ber":
                result = run_ber_sweep(spec, progress=lambda r: log(
                    f"{r['snr_db']:g} dB: BER {r['ber']:.4g} ({r['bit_errors']}/{r['bits']}, "
                    f"{r['stop_reason']})"))
            elif args.verb == "rate":
                result = run_rate_sweep(spec, progress=lambda r: log(
                    f"{r['snr_db']:g} dB: I {r['rate_bpcu']:.4f} bpcu, "
                    f"{r['spectral_efficiency']:.4f} bit/s/Hz"))
            else:
                result = run_psd(spec)
    except (SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrellisTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out is None:
        sys.stdout.write(result_to_text(result, args.format))
    else:
        emit_results(result, args.format, args.out)
    log(f"wall time {result.wall_time:.1f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
