"""ResNet-18 uniform-precision cost table, with and without full-precision end layers."""
import argparse

from videoiq.cost import all_quantizable, cost_report, format_cost_report, resnet18_arch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=16)
    ap.add_argument("--input", type=int, default=224)
    ap.add_argument("--classes", type=int, default=200)
    args = ap.parse_args()
    arch = resnet18_arch(args.classes, args.input)
    print("every conv/linear layer quantized:")
    print(format_cost_report(cost_report(all_quantizable(arch), args.frames)))
    print("\nfirst conv and classifier kept at full precision:")
    print(format_cost_report(cost_report(arch, args.frames)))


if __name__ == "__main__":
    main()
