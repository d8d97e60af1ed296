import sys
import argparse


def main(argv=None):
    parser = argparse.ArgumentParser(prog="graphot", description="graphot - optimal transport on graphs")
    parser.add_argument("command", choices=["solve", "bench", "validate"], help="What to do with the spec")
    parser.add_argument("spec", type=str, help="Path to a problem-spec JSON file")
    parser.add_argument("--threads", type=int, help="Worker threads for partition-parallel updates")
    parser.add_argument("--seed", type=int, help="Seed for generated marginals and random schedules")
    parser.add_argument("--out", type=str, help="CSV output path")
    parser.add_argument("--log-domain", action="store_true", help="Evaluate kernels in the log domain")
    parser.add_argument("--max-iter", type=int, help="Iteration cap")
    args = parser.parse_args(argv)

    from core.headless_runner import HeadlessRunner, configure_logging
    configure_logging()
    runner = HeadlessRunner(
        threads=args.threads,
        seed=args.seed,
        out=args.out,
        log_domain=args.log_domain,
        max_iter=args.max_iter,
    )
    command = {"solve": runner.cmd_solve, "bench": runner.cmd_bench, "validate": runner.cmd_validate}
    return command[args.command](args.spec)


if __name__ == "__main__":
    sys.exit(main())
