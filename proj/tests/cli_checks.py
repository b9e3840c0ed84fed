#!/usr/bin/env python3
"""End-to-end checks of the corners-lab command line interface.

Usage: cli_checks.py /path/to/corners-lab

Drives the built binary through every subcommand, the three exit-code
contracts (0 pass, 1 check failure, 2 config error), and the report
invariants: schema field, timestamp isolated to its own envelope field, and
byte-identical reports for identical configuration and seed.
"""

import json
import os
import subprocess
import sys
import tempfile

BIN = os.path.abspath(sys.argv[1])
CFG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
checks = 0


def run(*args, env_extra=None, expect=0, cwd=None):
    env = os.environ.copy()
    env.pop("CORNERS_LAB_THREADS", None)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run([BIN, *args], capture_output=True, text=True, env=env, cwd=cwd)
    if proc.returncode != expect:
        raise SystemExit(

            f"FAILED command: {' '.join(args)}\n"
            f"  expected exit {expect}, got {proc.returncode}\n"
            f"  stdout: {proc.stdout[:1500]}\n"
            f"  stderr: {proc.stderr[:1500]}"
        )
    return proc


def report(path):
    with open(path) as f:
        doc = json.load(f)
    assert doc["schema"] == 1, "envelope schema must be 1"
    assert "timestamp" in doc, "timestamp must sit in the envelope"
    assert "timestamp" not in doc["report"], "timestamp must stay out of the report body"
    return doc["report"]


def strip_timestamp(path):
    with open(path) as f:
        return [line for line in f if '"timestamp"' not in line]


def check(name, cond, detail=""):
    global checks
    checks += 1
    if not cond:
        raise SystemExit(f"FAILED check {checks}: {name} {detail}")
    print(f"ok {checks:2d}: {name}")


def main():
    tmp = tempfile.mkdtemp(prefix="cornerslab_cli_")

    def path(name):
        return os.path.join(tmp, name)

    # --- enumerate: the documented window has exactly ten stacks
    run("enumerate", "--out", path("enum.json"))
    rep = report(path("enum.json"))
    check("enumerate default count is 10", rep["count"] == 10, str(rep["count"]))
    check("enumerate lists every stack", len(rep["patterns"]) == 10 and not rep["truncated"])

    run("enumerate", "N=3", "k=1", "M=1", "--out", path("enum2.json"))
    rep = report(path("enum2.json"))
    check("enumerate N=3 M=1 window", rep["count"] == len(rep["patterns"]) > 0)

    proc = run("enumerate", "--format", "csv", "--out", path("enum.csv"))
    with open(path("enum.csv")) as f:
        check("enumerate csv header", f.readline() == "index,level,parts\n")

    # --- measure through a config file
    run("measure", "--config", os.path.join(CFG_DIR, "measure_small.cfg"),
        "--out", path("measure.json"))
    rep = report(path("measure.json"))
    check("measure normalizes", rep["pass"] and rep["normalization_gap"] < 1e-10)
    check("measure counts the support", rep["count"] == 20)

    # --- nekrasov certification: clean family passes, corrupted family fails
    run("verify-nekrasov", "--config", os.path.join(CFG_DIR, "nekrasov_small.cfg"),
        "--threads", "2", "--out", path("nek.json"))
    rep = report(path("nek.json"))
    check("nekrasov R1 and R2 certify", rep["r1"]["pass"] and rep["r2"]["pass"])
    check("nekrasov residues are tiny",
          rep["r1"]["max_abs_residue"] < 1e-10 and rep["r2"]["max_abs_residue"] < 1e-10)

    proc = run("verify-nekrasov", "--config", os.path.join(CFG_DIR, "nekrasov_small.cfg"),
               "nekrasov.corrupt=true", "--out", path("nek_bad.json"), expect=1)
    rep = report(path("nek_bad.json"))
    check("corrupted family fails", not rep["pass"] and len(rep["failures"]) > 0)
    check("failing term identified on stderr", "pole" in proc.stderr and "FAIL" in proc.stderr)

    # --- exit code 2 diagnostics
    proc = run("enumerate", "N=2", "bogus=7", expect=2)
    check("unknown key rejected", "measure.bogus" in proc.stderr)
    proc = run("measure", "weight=geometric", "N=2", "M=3", expect=2)
    check("missing required key reported", "measure.qs" in proc.stderr)
    proc = run("measure", "theta=abc", expect=2)
    check("unparseable value reported", "theta" in proc.stderr)
    run("measure", "--config", path("no_such_file.cfg"), expect=2)
    with open(path("broken.cfg"), "w") as f:
        f.write("key_without_section = 1\n")
    run("measure", "--config", path("broken.cfg"), expect=2)
    run("verify-jack", "--format", "xml", expect=2)
    run(expect=2)  # no subcommand
    run("no-such-command", expect=2)
    run("verify-continuous-loop", "continuous.N=2", "loop.points_5=4.0", expect=2)
    run("verify-jack", "--format", "csv", expect=2)  # csv only where tabular
    run("enumerate", "--out", "/no-such-dir/enum.json", expect=2)
    run("verify-jack", env_extra={"CORNERS_LAB_THREADS": "zero"}, expect=2,
        cwd=tmp)

    # --- jack identities with defaults: exit 0 listing both residual families
    run("verify-jack", "--out", path("jack.json"))
    rep = report(path("jack.json"))
    check("jack branching rows present", len(rep["branching"]) == 4)
    check("jack cauchy rows within bound",
          len(rep["cauchy"]) == 16 and all(c["within_bound"] for c in rep["cauchy"]))

    # --- bijections and the discrete loop equation
    run("verify-bijection", "--out", path("bij.json"))
    rep = report(path("bij.json"))
    check("bijections cancel termwise", rep["pass"] and rep["max_residual"] < 1e-10)
    check("bijections cover both variants", rep["checks"] > 0 and rep["matched_pairs"] > 0)

    run("verify-discrete-loop", "--out", path("dloop.json"))
    rep = report(path("dloop.json"))
    check("discrete loop closes", rep["pass"] and rep["loop"]["residual"] < 1e-8)

    run("verify-discrete-loop", "loop.points_2=5.5", "--out", path("dloop1.json"))
    rep = report(path("dloop1.json"))
    check("discrete loop with one observation point",
          rep["pass"] and len(rep["loop"]["terms"]) == 5)

    run("verify-discrete-loop", "--tol", "1e-30", expect=1)

    # --- cumulant algebra
    run("verify-cumulants", "--out", path("cum.json"))
    rep = report(path("cum.json"))
    check("cumulant round trip exact",
          rep["pass"] and all(r["residual"] < 1e-12 for r in rep["roundtrip"]))
    check("deformation derivatives match",
          all(r["residual"] < 1e-6 for r in rep["deformation"]))

    # --- continuous sampling, batch reuse, and report idempotence
    sample_args = ["sample-continuous", "continuous.samples=500", "continuous.burn_in=100",
                   "continuous.batch_out=" + path("b.batch"), "--seed", "9"]
    run(*sample_args, "--out", path("s1.json"))
    run(*sample_args, "--out", path("s2.json"))
    run(*sample_args[:-2], "--seed", "10", "--out", path("s3.json"))
    check("identical config and seed give byte-identical reports",
          strip_timestamp(path("s1.json")) == strip_timestamp(path("s2.json")))
    check("a different seed changes the report",
          strip_timestamp(path("s1.json")) != strip_timestamp(path("s3.json")))
    rep = report(path("s1.json"))
    check("sample batch written with sidecar",
          os.path.exists(path("b.batch")) and os.path.exists(path("b.batch.json")))
    with open(path("b.batch.json")) as f:
        sidecar = json.load(f)
    check("sidecar carries diagnostics", "acceptance_rate" in sidecar)
    check("sampler diagnostics reported", 0.0 < rep["acceptance_rate"] <= 1.0)

    run("verify-continuous-loop", "continuous.theta=1", "continuous.N=1",
        "continuous.batch_in=" + path("b.batch"), "--out", path("reuse.json"))
    rep = report(path("reuse.json"))
    check("continuous loop accepts a stored batch", rep["loop"]["within_four_sigma"])
    run("verify-continuous-loop", "continuous.theta=1.4", "continuous.N=1",
        "continuous.batch_in=" + path("b.batch"), expect=2)

    run("verify-continuous-loop", "continuous.N=2", "continuous.k=2", "continuous.theta=1.3",
        "continuous.samples=30000", "--seed", "5", "--out", path("cloop.json"))
    rep = report(path("cloop.json"))
    check("continuous loop closes within noise",
          rep["pass"] and rep["loop"]["residual"] < 4 * rep["loop"]["std_error"])

    # --- diffuse limit, json and csv
    diffuse_args = ["diffuse-limit", "continuous.theta=1", "continuous.N=1",
                    "continuous.a_minus=0", "continuous.a_plus=1", "continuous.V=0",
                    "diffuse.L_values=16,32,64", "diffuse.samples=4000",
                    "diffuse.burn_in=500", "--seed", "1"]
    run(*diffuse_args, "--out", path("diff.json"))
    rep = report(path("diff.json"))
    check("diffuse limit closes at the finest lattice",
          rep["pass"] and rep["final_gap1_within"] and rep["final_gap2_within"])
    check("diffuse table has one row per lattice", len(rep["table"]["rows"]) == 3)

    run(*diffuse_args, "--format", "csv", "--out", path("diff.csv"))
    with open(path("diff.csv")) as f:
        check("diffuse csv header", f.readline().startswith("L,M,exact,"))

    # --- a deterministic command is byte-identical end to end
    run("verify-jack", "--out", path("j1.json"))
    run("verify-jack", "--out", path("j2.json"))
    check("deterministic commands reproduce byte for byte",
          strip_timestamp(path("j1.json")) == strip_timestamp(path("j2.json")))

    print(f"all {checks} CLI checks passed")


if __name__ == "__main__":
    main()
