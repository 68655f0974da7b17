"""Full protocol on a config: every stage, then a short printout of the paired report.

    python3 scripts/run_protocol.py configs/online_retail_ii.json [extra CLI flags, e.g. --seed-list 0,1]
"""

import json
import sys

from retail_marl.cli import main as cli
from retail_marl.config import RunConfig


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    config, extra = sys.argv[1], sys.argv[2:]
    code = cli(["all", "--config", config, *extra])
    if code:
        sys.exit(code)
    out = [a for i, a in enumerate(extra) if i and extra[i - 1] == "--out-dir"]
    work = RunConfig.load(config).override(out_dir=out[0] if out else None).work_dir
    rep = json.loads((work / "eval" / "report.json").read_text())
    print(f"{rep['method_b']} vs {rep['method_a']}: wins {rep['win_rate']}, mean diff {rep['mean_diff']:.3f} "
          f"[{rep['ci_low']:.3f}, {rep['ci_high']:.3f}]")
    print(f"figure data in {work / 'report'}")


if __name__ == "__main__":
    main()
