#!/usr/bin/env python3
"""Runs every ikno subcommand at small sizes and validates its JSON report
(both the stdout copy and the file on disk) against schemas/."""

import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource


def main() -> int:
    if len(sys.argv) != 4:
        print("usage: validate_reports.py IKNO_BIN SCHEMA_DIR WORK_DIR", file=sys.stderr)
        return 2
    ikno = str(pathlib.Path(sys.argv[1]).resolve())
    schema_dir, work = pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)

    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources(
        (name, Resource.from_contents(s)) for name, s in schemas.items())

    model = ["--grid-points", "4", "--hidden", "8", "--branches", "2", "--processor-width", "8"]
    runs = [
        ("gen-data", ["gen-data", "--kind", "csines", "--num-train", "12", "--num-test", "4",
                      "--input-points", "24", "--query-points", "16", "--out", "cs"], "cs/gen-data.json"),
        ("gen-data", ["gen-data", "--kind", "poisson-gauss", "--solver-res", "33", "--num-train", "2",
                      "--num-test", "1", "--out", "pg"], "pg/gen-data.json"),
        ("gen-data", ["gen-data", "--kind", "toy-trajectory", "--out", "traj"], "traj/gen-data.json"),
        ("verify", ["verify", "--cases", "20", "--out", "ver"], "ver/verify.json"),
        ("train", ["train", "--data", "cs", "--steps", "4", *model, "--out", "tr"], "tr/train.json"),
        ("train", ["train", "--data", "traj", "--steps", "2", "--variant", "truncated", "--processor",
                   "attention", *model, "--out", "tr_att"], "tr_att/train.json"),
        ("eval", ["eval", "--data", "cs", "--checkpoint", "tr/checkpoint", "--out", "ev"], "ev/eval.json"),
        ("eval", ["eval", "--data", "cs", "--split", "train", "--variant", "vanilla", *model, "--out", "ev0"],
         "ev0/eval.json"),
        ("finite-order-study", ["finite-order-study", "--data", "cs", "--steps", "2", "--grid-points", "8",
                                "--radius", "0.4", "--out", "fo"], "fo/finite-order-study.json"),
        ("bench", ["bench", "--sweep-dims", "1,2", "--large-points", "6", "--large-dim", "2",
                   "--doubling-points", "4,8", "--channels", "2", "--out", "bn"], "bn/bench.json"),
    ]

    failures = 0
    for command, args, report_file in runs:
        proc = subprocess.run([ikno, *args], cwd=work, capture_output=True, text=True)
        label = " ".join(args)
        if proc.returncode != 0:
            print(f"FAIL {label}: exit {proc.returncode}\n{proc.stderr}")
            failures += 1
            continue
        validator = jsonschema.Draft202012Validator(schemas[f"{command}.schema.json"], registry=registry)
        bad = 0
        for source, text in (("stdout", proc.stdout), (report_file, (work / report_file).read_text())):
            for e in sorted(validator.iter_errors(json.loads(text)), key=lambda e: list(e.path)):
                print(f"FAIL {label} [{source}] at /{'/'.join(map(str, e.path))}: {e.message}")
                bad += 1
        failures += bad > 0
        if not bad:
            print(f"ok   {label}")
    print(f"{len(runs)} runs, {failures} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
