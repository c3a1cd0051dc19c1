"""FLOPs of one inference for a few input sizes and region counts, default and tiny configs."""

from regionmatte.config import PipelineConfig, tiny_config
from regionmatte.flops import count_flops


def main():
    for label, config in (("default", PipelineConfig()), ("tiny", tiny_config())):
        print(f"{label} config")
        print(f"{'input':>11} {'regions':>8} {'coarse GF':>10} {'refine GF':>10} {'total GF':>9}")
        for h, w in ((512, 512), (896, 896), (1080, 1920)):
            for n in (0, 500, 2000):
                f = count_flops(config, h, w, n)
                print(f"{h:>5}x{w:<5} {n:>8} {f['coarse_flops'] / 1e9:>10.3f} {f['refine_flops'] / 1e9:>10.3f} "
                      f"{f['total'] / 1e9:>9.3f}")
        print()


if __name__ == "__main__":
    main()
