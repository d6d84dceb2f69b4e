import json
import math
import os
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main() -> int:
    airframe = os.getenv("SMOKE_AIRFRAME", os.path.join(ROOT, "airframes", "tilted_unit.toml"))
    with tempfile.TemporaryDirectory() as out:
        cmd = [sys.executable, os.path.join(ROOT, "cli.py"), "feasibility", "--airframe", airframe, "--out", out]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=60, cwd=ROOT)
        except subprocess.TimeoutExpired:
            print("smoke_check: feasibility timed out")
            return 1
        if proc.returncode != 0:
            print(f"smoke_check: exit {proc.returncode}: {proc.stderr.strip().splitlines()[-1:]}")
            return 1
        try:
            report = json.loads(proc.stdout)
        except json.JSONDecodeError as e:
            print(f"smoke_check: stdout is not JSON: {e}")
            return 1
        if not os.path.exists(os.path.join(out, "feasibility.json")):
            print("smoke_check: feasibility.json missing")
            return 1

    for part in ("unit", "assembled"):
        values = report.get(part) or {}
        for key in ("f_min", "tau_min"):
            value = values.get(key)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0.0:
                print(f"smoke_check: {part}.{key} invalid: {value!r}")
                return 1
    if report["assembled"]["f_min"] <= report["unit"]["f_min"]:
        print("smoke_check: assembled f_min not above unit f_min")
        return 1
    print(f"smoke_check: ok (unit f_min={report['unit']['f_min']:.3f} N, "
          f"assembled f_min={report['assembled']['f_min']:.3f} N, yaw x{report['yaw_ratio']:.2f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
