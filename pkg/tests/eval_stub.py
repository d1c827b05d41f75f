"""Line-protocol evaluator stub for subprocess tests.

Modes (first argv):
  echo       loss = theta_cont["x"], no constraints
  constraint loss = 0.5, constraints [0.2, 0.05]
  error      replies with an error field
  garbage    replies with a non-JSON line
  wrong-id   replies with id + 1
  slow       sleeps 10s before replying
  die        exits after the handshake
  die-once   exits on the first request, then behaves like echo (restart test)
"""

import json
import os
import sys
import time

MODE = sys.argv[1] if len(sys.argv) > 1 else "echo"
MARKER = sys.argv[2] if len(sys.argv) > 2 else None


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main():
    hello = json.loads(sys.stdin.readline())
    assert hello["hello"]["protocol"] == 1
    n_constraints = 2 if MODE == "constraint" else 0
    send({"ready": {"constraints": n_constraints}})
    if MODE == "die":
        sys.exit(3)
    for line in sys.stdin:
        req = json.loads(line)
        if MODE == "slow":
            time.sleep(10)
        if MODE == "garbage":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        if MODE == "wrong-id":
            send({"id": req["id"] + 1, "loss": 0.1, "constraints": []})
            continue
        if MODE == "error":
            send({"id": req["id"], "loss": 0.0, "constraints": [],
                  "error": "training crashed"})
            continue
        if MODE == "die-once" and MARKER and not os.path.exists(MARKER):
            with open(MARKER, "w") as fh:
                fh.write("died")
            sys.exit(4)
        if MODE == "constraint":
            send({"id": req["id"], "loss": 0.5, "constraints": [0.2, 0.05]})
            continue
        send({"id": req["id"], "loss": req["theta_cont"]["x"],
              "constraints": []})


if __name__ == "__main__":
    main()
