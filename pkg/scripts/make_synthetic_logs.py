"""Write a planted-pattern synthetic corpus (train.log, test.log, labels.tsv)."""
import argparse

from logvote.synthetic import write_planted_logs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("directory")
    ap.add_argument("--train", type=int, default=600)
    ap.add_argument("--test", type=int, default=1200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    paths = write_planted_logs(args.directory, args.train, args.test, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
