"""Validates every line printed by the sample program against the protocol schema."""

import json
import subprocess
import sys

import jsonschema


def main() -> int:
    schema_path, program = sys.argv[1], sys.argv[2]
    with open(schema_path) as f:
        schema = json.load(f)
    validator = jsonschema.Draft7Validator(schema)
    lines = subprocess.run([program], check=True, capture_output=True, text=True).stdout.splitlines()
    seen = set()
    failures = 0
    for line in lines:
        msg = json.loads(line)
        seen.add(msg["type"])
        for err in validator.iter_errors(msg):
            failures += 1
            print(f"{msg['type']}: {err.message}")
    expected = {"SetCommand", "SetMode", "StartRecording", "StopRecording", "ResetScene", "Ping", "AcquireLease",
                "ReleaseLease", "StateUpdate", "RecordingAck", "Error", "Pong", "LeaseStatus"}
    missing = expected - seen
    if missing:
        print("no sample for: " + ", ".join(sorted(missing)))
        failures += 1
    print(f"{len(lines)} messages checked, {failures} problems")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
