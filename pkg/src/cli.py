"""
Command-line interface for the leaky sandpile toolkit.
"""
import argparse
import logging
import math
import os
import sys
from typing import List, Optional, Tuple

from .config import DEFAULT_SETTINGS
from .errors import SandpileError
from .experiments import ExperimentRunner, format_number
from .kernel import parse_overrides

COMMANDS = ("validate", "simulate", "shape", "predict", "compare", "polytope", "ellipsoid", "first-passage", "render")


def number_list(text: str) -> List[float]:
    """Parse '1e6,1e9' into floats."""
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无效的数值列表: {text}")
    if not values or not all(math.isfinite(v) and v >= 0 for v in values):
        raise argparse.ArgumentTypeError(f"数值必须是有限的非负数: {text}")
    return values


def sand_list(text: str) -> List[float]:
    """Parse a list of sand amounts, all strictly positive."""
    values = number_list(text)
    if any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"沙量必须为正: {text}")
    return values


def int_list(text: str) -> List[int]:
    """Parse '4,8,16' into positive integers."""
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无效的整数列表: {text}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"整数必须为正: {text}")
    return values


def slice_spec(text: str) -> Tuple[int, int]:
    """Parse 'axis=value' (1-based axis) into (0-based axis, value)."""
    try:
        axis_text, value_text = text.split("=", 1)
        axis, value = int(axis_text), int(value_text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"切片格式应为 axis=value: {text}")
    if axis < 1:
        raise argparse.ArgumentTypeError(f"坐标轴从 1 开始编号: {text}")
    return axis - 1, value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"无效的整数: {text}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"整数必须为正: {text}")
    return value


def parse_arguments(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments.

    Args:
        args: Command line arguments (uses sys.argv if None).

    Returns:
        Parsed arguments.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", "-o", type=str, default=None,
                        help="输出目录 (默认: ./runs/<命令>)")
    common.add_argument("--threads", type=positive_int, default=os.cpu_count(),
                        help="方向扫描的并发线程数 (默认: CPU 核数)")
    common.add_argument("--m-override", action="append", default=[], metavar="COLOR:VALUE",
                        help="替换某个颜色的漏损系数, 可重复")
    common.add_argument("--verbose", "-v", action="store_true", help="输出调试日志")
    common.add_argument("--quiet", action="store_true", help="不显示进度条")

    parser = argparse.ArgumentParser(
        prog="lasm",
        description="多色漏沙堆模型 (LASM) 的模拟与极限形状工具",
        epilog="示例：\n"
               "检查模型假设: lasm validate fig1.model --horizon 8\n"
               "模拟沙堆: lasm simulate fig1.model --N 1e6 --seed 7 --out run1/\n"
               "比较极限形状: lasm compare fig1.model --N 1e6,1e9,1e12 --dirs 720\n"
               "多面体极限: lasm polytope l1.model --m 1e4,1e6,1e8",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    subparsers = parser.add_subparsers(dest="command", help="命令")

    validate_parser = subparsers.add_parser("validate", parents=[common], help="检查模型假设")
    validate_parser.add_argument("spec", type=str, help="模型文件")
    validate_parser.add_argument("--horizon", type=positive_int, default=None,
                                 help="枚举步数 (默认: 2p(最大步长+1))")

    simulate_parser = subparsers.add_parser("simulate", parents=[common], help="稳定化点源沙堆")
    simulate_parser.add_argument("spec", type=str, help="模型文件")
    simulate_parser.add_argument("--N", type=sand_list, required=True, help="初始沙量, 可用逗号分隔多个")
    simulate_parser.add_argument("--seed", type=int, default=0, help="倒塌顺序的随机种子 (默认: 0)")
    simulate_parser.add_argument("--source-color", type=positive_int, default=1, help="点源颜色 (默认: 1)")

    shape_parser = subparsers.add_parser("shape", parents=[common], help="计算预测的极限形状")
    shape_parser.add_argument("spec", type=str, help="模型文件")
    shape_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")

    predict_parser = subparsers.add_parser("predict", parents=[common], help="由 Green 函数计算半径夹逼")
    predict_parser.add_argument("spec", type=str, help="模型文件")
    predict_parser.add_argument("--N", type=sand_list, required=True, help="初始沙量列表")
    predict_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")
    predict_parser.add_argument("--box-R", type=positive_int, default=None, help="Green 表的盒子半径")
    predict_parser.add_argument("--eps-stop", type=float, default=DEFAULT_SETTINGS.eps_stop,
                                help=f"剩余质量阈值 (默认: {DEFAULT_SETTINGS.eps_stop:g})")
    predict_parser.add_argument("--source-color", type=positive_int, default=1, help="点源颜色 (默认: 1)")

    compare_parser = subparsers.add_parser("compare", parents=[common], help="比较模拟形状与预测")
    compare_parser.add_argument("spec", type=str, help="模型文件")
    compare_parser.add_argument("--N", type=sand_list, required=True, help="初始沙量列表")
    compare_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")
    compare_parser.add_argument("--seed", type=int, default=0, help="倒塌顺序的随机种子 (默认: 0)")
    compare_parser.add_argument("--tol-angle", type=float, default=0.1, help="方向锥的半角, 弧度 (默认: 0.1)")
    compare_parser.add_argument("--box-R", type=positive_int, default=None, help="Green 表的盒子半径")
    compare_parser.add_argument("--eps-stop", type=float, default=DEFAULT_SETTINGS.eps_stop,
                                help=f"剩余质量阈值 (默认: {DEFAULT_SETTINGS.eps_stop:g})")
    compare_parser.add_argument("--source-color", type=positive_int, default=1, help="点源颜色 (默认: 1)")

    polytope_parser = subparsers.add_parser("polytope", parents=[common], help="m 趋于无穷时的多面体极限")
    polytope_parser.add_argument("spec", type=str, help="模型文件")
    polytope_parser.add_argument("--m", type=number_list, default=[1e4, 1e6, 1e8], help="漏损系数列表")
    polytope_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")

    ellipsoid_parser = subparsers.add_parser("ellipsoid", parents=[common], help="m 趋于 1 时的椭球极限")
    ellipsoid_parser.add_argument("spec", type=str, help="模型文件")
    ellipsoid_parser.add_argument("--m", type=number_list, default=[1.01, 1.001, 1.0001], help="漏损系数列表")
    ellipsoid_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")

    passage_parser = subparsers.add_parser("first-passage", parents=[common], help="首达集合与循环点凸包")
    passage_parser.add_argument("spec", type=str, help="模型文件")
    passage_parser.add_argument("--n", type=int_list, default=[4, 8, 16, 32], help="步数列表")
    passage_parser.add_argument("--start-color", type=positive_int, default=1, help="起点颜色 (默认: 1)")

    render_parser = subparsers.add_parser("render", parents=[common], help="输出 PPM 切片与 SVG 叠加图")
    render_parser.add_argument("spec", type=str, help="模型文件")
    render_parser.add_argument("--N", type=float, default=None, help="先模拟的初始沙量")
    render_parser.add_argument("--field", type=str, default=None, help="已有的构型 CSV")
    render_parser.add_argument("--seed", type=int, default=0, help="倒塌顺序的随机种子 (默认: 0)")
    render_parser.add_argument("--slice", type=slice_spec, default=None, help="三维切片, 格式 axis=value")
    render_parser.add_argument("--dirs", type=positive_int, default=None, help="方向数")
    render_parser.add_argument("--source-color", type=positive_int, default=1, help="点源颜色 (默认: 1)")

    parsed_args = parser.parse_args(args)

    # Validate that a command was provided
    if not parsed_args.command:
        parser.print_help(sys.stderr)
        sys.exit(2)

    return parsed_args


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point for CLI.

    Args:
        args: Command line arguments (uses sys.argv if None).

    Returns:
        Exit code: 0 on success, 2 for usage and model errors, 3 when a
        numerical guard refused to answer.
    """
    try:
        parsed_args = parse_arguments(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    configure_logging(parsed_args.verbose)
    output = parsed_args.out or os.path.join("runs", parsed_args.command)

    try:
        runner = ExperimentRunner(
            parsed_args.spec,
            output,
            max_workers=parsed_args.threads,
            quiet=parsed_args.quiet,
            m_overrides=parse_overrides(parsed_args.m_override),
        )
        code = dispatch(runner, parsed_args)
        runner.write_manifest(parsed_args.command)
    except SandpileError as exc:
        print(f"错误: {exc}", file=sys.stderr)
        return exc.exit_code
    return code


def dispatch(runner: ExperimentRunner, parsed_args: argparse.Namespace) -> int:
    """Run one subcommand and report on stdout."""
    command = parsed_args.command

    if command == "validate":
        report = runner.validate(parsed_args.horizon)
        holds = report["leaky"] and report["irreducible"] is True
        if holds:
            print(f"assumptions: hold (horizon {report['horizon']})")
        else:
            print(f"assumptions: fail (horizon {report['horizon']})")
            if not report["leaky"]:
                print("  没有漏损的颜色")
            if report["irreducible"] is None:
                print("  不可约性在给定步数内无法判定")
            elif report["irreducible"] is False:
                print("  游走不可约性不成立")
        if report["aperiodic"] is None:
            print("note: aperiodicity undetermined within the horizon")
        return 0 if holds else 2

    elif command == "simulate":
        source = parsed_args.source_color - 1
        print(f"模拟 {len(parsed_args.N)} 个初始沙量 (种子: {parsed_args.seed})...")
        for N, final, odo in runner.simulate(parsed_args.N, parsed_args.seed, source):
            print(f"N = {format_number(N)}: 倒塌格点 {len(odo.emitted)} 个, "
                  f"漏出 {final.leaked_total:.6g}, 倒塌次数 {final.topple_events}")
        return 0

    elif command == "shape":
        curve = runner.shape(parsed_args.dirs)
        print(f"极限形状: {curve.radii.size} 个方向, 半径范围 [{curve.radii.min():.6g}, {curve.radii.max():.6g}]")
        return 0

    elif command == "predict":
        runner.predict(parsed_args.N, parsed_args.dirs, parsed_args.box_R, parsed_args.eps_stop,
                       parsed_args.source_color - 1)
        print(f"alpha = {runner.parameters['alpha']}, beta = {runner.parameters['beta']}")
        print(f"半径已写入 {os.path.join(runner.output_dir, 'radii.csv')}")
        return 0

    elif command == "compare":
        records = runner.compare(parsed_args.N, parsed_args.dirs, parsed_args.seed, parsed_args.tol_angle,
                                 parsed_args.box_R, parsed_args.eps_stop, parsed_args.source_color - 1)
        print("N\tmax|outer/logN - 1/gamma|\t缺失方向\t夹逼违例")
        for record in records:
            print(f"{format_number(record['N'])}\t{record['max_deviation']:.6g}\t"
                  f"{record['missing']}\t{record['violations']}")
        violations = sum(r["violations"] for r in records)
        print("sandwich: ok" if violations == 0 else f"sandwich: {violations} violations")
        return 0

    elif command == "polytope":
        for m, distance in runner.polytope(parsed_args.m, parsed_args.dirs):
            print(f"m = {format_number(m)}: d_H = {distance:.6g}")
        return 0

    elif command == "ellipsoid":
        for m, gap in runner.ellipsoid(parsed_args.m, parsed_args.dirs):
            print(f"m = {format_number(m)}: spherical gap = {gap:.6g}")
        return 0

    elif command == "first-passage":
        for n, distance in runner.first_passage(parsed_args.n, parsed_args.start_color - 1):
            print(f"n = {n}: d_H = {distance:.6g}")
        return 0

    elif command == "render":
        axis, value = parsed_args.slice if parsed_args.slice else (None, 0)
        written = runner.render(parsed_args.N, parsed_args.field, parsed_args.seed, axis, value,
                                parsed_args.dirs, parsed_args.source_color - 1)
        for path in written:
            print(f"已写入 {path}")
        return 0

    return 0


if __name__ == "__main__":
    sys.exit(main())
