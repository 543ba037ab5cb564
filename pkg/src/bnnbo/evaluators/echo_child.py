"""Reference child process for the simulator protocol.

Answers each request with the normalized coordinates zero-padded (or cut) to
``--metrics`` values.  Extra flags misbehave on purpose for testing the
client: reversed batches, delays, malformed lines, short metric vectors.

    python -m bnnbo.evaluators.echo_child --metrics 3
"""
import argparse
import json
import sys
import time


def respond(req, n_metrics, args):
    x = req["x"]
    if args.fail_every and (req["id"] + 1) % args.fail_every == 0:
        return {"id": req["id"], "error": "simulation did not converge"}
    metrics = (list(x) + [0.0] * n_metrics)[:n_metrics]
    if args.short:
        metrics = metrics[:-1]
    return {"id": req["id"], "metrics": metrics}


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--metrics", type=int, required=True)
    ap.add_argument("--fidelities", default="1,2")
    ap.add_argument("--group", type=int, default=1, help="answer in reverse order per group of requests")
    ap.add_argument("--delay", type=float, default=0.0)
    ap.add_argument("--malformed", action="store_true")
    ap.add_argument("--short", action="store_true")
    ap.add_argument("--fail-every", type=int, default=0)
    ap.add_argument("--exit-after", type=int, default=0)
    args = ap.parse_args(argv)

    out = sys.stdout
    fids = [int(f) for f in args.fidelities.split(",")]
    out.write(json.dumps({"protocol": 1, "metrics": args.metrics, "fidelities": fids}) + "\n")
    out.flush()
    held = []
    served = 0
    for line in sys.stdin:
        if not line.strip():
            continue
        held.append(json.loads(line))
        if len(held) < args.group:
            continue
        for req in reversed(held):
            if args.exit_after and served >= args.exit_after:
                return 3
            if args.delay:
                time.sleep(args.delay)
            if args.malformed:
                out.write("{not json\n")
            else:
                out.write(json.dumps(respond(req, args.metrics, args)) + "\n")
            out.flush()
            served += 1
        held = []
    return 0


if __name__ == "__main__":
    sys.exit(main())
