"""End-to-end checks of the cudpo command line."""

import csv
import io
import json
import os
import subprocess
import sys
import tempfile
import unittest

CLI = os.environ.get("CUDPO_CLI", "cudpo")
SMALL = [
    "--set", "world.n_problems=40",
    "--set", "train.epochs=150",
    "--set", "eval.bt_samples=20000",
    "--set", "eval.scaling_seeds=2",
    "--set", "eval.scaling_epochs=40",
]


def run(*args, check=True):
    proc = subprocess.run([CLI, *args], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}: {proc.stderr}")
    return proc


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_coupon_suite(self):
        run("-o", self.out, "theory", "--suite=coupon", "--k=8", "--trials=10000")
        rows = read_csv(os.path.join(self.out, "default", "reports", "theory_coupon.csv"))
        self.assertEqual(len(rows), 1)
        self.assertAlmostEqual(float(rows[0]["closed_form"]), 109.9607890910583, places=9)
        self.assertLess(abs(float(rows[0]["mean"]) / 109.9607890910583 - 1.0), 0.02)

    def test_staged_run(self):
        base = ["-o", self.out, *SMALL]
        run(*base, "world")
        run(*base, "refine")
        run(*base, "pairs")
        stats = run(*base, "pairs", "--stats-only").stdout
        with open(os.path.join(self.out, "default", "reports", "dataset_stats.csv")) as f:
            self.assertEqual(stats, f.read())
        run(*base, "train", "--phase=two")
        run(*base, "eval", "--metric=alignment")
        rows = read_csv(os.path.join(self.out, "default", "reports", "alignment.csv"))
        self.assertTrue(rows)

    def test_config_dump_round_trip(self):
        text = run("--set", "train.beta=0.2", "config").stdout
        path = os.path.join(self.out, "run.cfg")
        with open(path, "w") as f:
            f.write(text)
        self.assertEqual(run("-c", path, "config").stdout, text)

    def test_errors_are_json(self):
        proc = run("--set", "bogus.key=1", "run", check=False)
        self.assertEqual(proc.returncode, 2)
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        self.assertEqual(err["status"], "error")
        self.assertIn("bogus", err["message"])

        proc = run("-o", self.out, "train", check=False)
        self.assertEqual(proc.returncode, 1)
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        self.assertEqual(err["stage"], "train")

        proc = run("--seed", "3", "--set", "seed=4", "config", check=False)
        self.assertEqual(proc.returncode, 2)


if __name__ == "__main__":
    if len(sys.argv) > 1:
        CLI = sys.argv.pop(1)
    unittest.main()
