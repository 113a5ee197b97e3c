"""Command-line pipeline.

Subcommands: dict build|inspect, bank build, normals, reflectance, relight,
integrate, bench, synth.  Global flags: --config, --seed, --threads, --out.
Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, dump_config, load_config
from .containers import (
    load_abundances,
    load_dictionary,
    save_bank,
    save_dictionary,
)
from .errors import ConfigError, FormatError, NumericError
from .fileio import read_pfm, write_pfm, write_png16
from .geometry import CandidatePyramid
from .integrate import integrate_normals
from .pipeline import build_dictionary, ingest, relight, run_normals, run_reflectance, synth
from .presets import hemisphere_rig
from .render import NormalMap, build_bank
from .bench import run_bench

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psbrdf", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads for per-pixel stages")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")

    sub = p.add_subparsers(dest="command")

    d = sub.add_parser("dict", help="dictionary operations")
    dsub = d.add_subparsers(dest="dict_command", required=True)
    dbuild = dsub.add_parser("build", help="build a dictionary file from the config source")
    dbuild.add_argument("path", help="output .bdct file")
    dinspect = dsub.add_parser("inspect", help="print a dictionary summary")
    dinspect.add_argument("path", help=".bdct file to inspect")

    b = sub.add_parser("bank", help="exemplar bank operations")
    bsub = b.add_subparsers(dest="bank_command", required=True)
    bbuild = bsub.add_parser("build", help="pre-render the exemplar bank to a cache file")
    bbuild.add_argument("path", help="output .bank file")

    n = sub.add_parser("normals", help="estimate a normal map from a stack directory")
    n.add_argument("stack", help="stack directory (images + lights.txt [+ mask.png])")

    r = sub.add_parser("reflectance", help="fit per-pixel abundances given normals")
    r.add_argument("stack", help="stack directory")
    r.add_argument("normals", help="normal map PFM")

    rl = sub.add_parser("relight", help="render the reconstruction under a new point light")
    rl.add_argument("normals", help="normal map PFM")
    rl.add_argument("abundances", help="abundance container (.abdc)")
    rl.add_argument("dictionary", help="dictionary container (.bdct)")
    rl.add_argument("light", nargs=3, type=float, metavar=("LX", "LY", "LZ"))
    rl.add_argument("--intensity", type=float, default=1.0)

    it = sub.add_parser("integrate", help="integrate a normal map into a depth map")
    it.add_argument("normals", help="normal map PFM")

    be = sub.add_parser("bench", help="run an experiment protocol")
    be.add_argument("protocol", choices=["table1", "table2", "fig4", "fig5", "fig8"])

    sy = sub.add_parser("synth", help="generate a synthetic scene as a stack directory")
    sy.add_argument("directory", help="output stack directory")

    return p


def _load_cfg(args) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return load_config(args.config, overrides)


def _read_normal_map(path) -> NormalMap:
    data = read_pfm(path)
    if data.ndim != 3:
        raise FormatError(f"{path}: expected a 3-channel normal map")
    n = data.astype(np.float64)
    norm = np.linalg.norm(n, axis=2)
    mask = norm > 1e-6
    n[mask] /= norm[mask][:, None]
    n[~mask] = (0.0, 0.0, 1.0)
    return NormalMap(n, mask)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command is None:
            parser.print_help()
            return EXIT_CONFIG
        out = Path(args.out)

        if args.command == "dict":
            if args.dict_command == "build":
                save_dictionary(args.path, build_dictionary(cfg))
                print(f"wrote {args.path}")
            else:
                d = load_dictionary(args.path)
                g = d.grid
                print(f"atoms: {len(d)}  channels: {d.channels}  grid: {g.n_th}x{g.n_td}x{g.n_pd}")
                for label, atom in zip(d.labels, d.atoms):
                    print(f"  {label}: mean {atom.values.mean():.5f}  max {atom.values.max():.5f}")
        elif args.command == "bank":
            d = build_dictionary(cfg)
            rig = hemisphere_rig(cfg.lights)
            bank = build_bank(d, CandidatePyramid.build(cfg.pyramid), rig)
            save_bank(args.path, bank)
            print(f"wrote {args.path} ({bank.matrix_count} matrices)")
        elif args.command == "normals":
            stack = ingest(args.stack)
            run_normals(cfg, stack, out)
            print(f"wrote {out}/normals.pfm")
        elif args.command == "reflectance":
            stack = ingest(args.stack)
            nmap = _read_normal_map(args.normals)
            run_reflectance(cfg, stack, nmap, out)
            print(f"wrote {out}/abundances.abdc")
        elif args.command == "relight":
            nmap = _read_normal_map(args.normals)
            abund = load_abundances(args.abundances)
            d = load_dictionary(args.dictionary)
            img = relight(nmap, abund, d, np.array(args.light), args.intensity)
            out.mkdir(parents=True, exist_ok=True)
            write_pfm(out / "relit.pfm", img.astype(np.float32))
            write_png16(out / "relit.png", np.clip(img, 0.0, 1.0))
            print(f"wrote {out}/relit.pfm")
        elif args.command == "integrate":
            nmap = _read_normal_map(args.normals)
            depth = integrate_normals(nmap)
            out.mkdir(parents=True, exist_ok=True)
            write_pfm(out / "depth.pfm", np.nan_to_num(depth).astype(np.float32))
            print(f"wrote {out}/depth.pfm")
        elif args.command == "bench":
            rep = run_bench(args.protocol, cfg, out)
            print(f"wrote {out}/{args.protocol}_results.csv ({len(rep.rows)} rows)")
        elif args.command == "synth":
            synth(cfg, args.directory)
            print(f"wrote scene to {args.directory}")
        return EXIT_OK
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
