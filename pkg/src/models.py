from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Tuple, TypedDict

import numpy as np

# 格点位置 (x_1, ..., x_d, color)，颜色从 0 开始编号
Site = Tuple[int, ...]


class Entry(NamedTuple):
    "倒塌规则中的一条权重 c(offset, source, target)"

    offset: Tuple[int, ...]
    source: int
    target: int
    weight: float


class ModelSpec(NamedTuple):
    "多色漏沙堆模型: 维数、颜色数、漏损系数与倒塌权重"

    dimension: int
    colors: int
    leakiness: Tuple[float, ...]
    entries: Tuple[Entry, ...]

    @property
    def row_sums(self) -> Tuple[float, ...]:
        sums = [0.0] * self.colors
        for entry in self.entries:
            sums[entry.source] += entry.weight
        return tuple(sums)

    @property
    def thresholds(self) -> Tuple[float, ...]:
        return tuple(m * s for m, s in zip(self.leakiness, self.row_sums))

    @property
    def max_step(self) -> int:
        "支撑集中最大的 1-范数位移"
        return max((sum(abs(c) for c in e.offset) for e in self.entries), default=0)


@dataclass(frozen=True, eq=False)
class JumpKernel:
    "被杀死随机游走的跳跃测度 mu_{i,j}(x)"

    dimension: int
    colors: int
    leakiness: Tuple[float, ...]
    offsets: np.ndarray
    sources: np.ndarray
    targets: np.ndarray
    probs: np.ndarray

    @property
    def kill_prob(self) -> Tuple[float, ...]:
        return tuple(1.0 - 1.0 / m for m in self.leakiness)

    @property
    def size(self) -> int:
        return int(self.probs.shape[0])

    @property
    def max_step(self) -> int:
        if self.size == 0:
            return 0
        return int(np.abs(self.offsets).sum(axis=1).max())

    def row_mass(self) -> np.ndarray:
        "每个颜色的总跳跃概率"
        mass = np.zeros(self.colors)
        np.add.at(mass, self.sources, self.probs)
        return mass

    def by_source(self) -> List[List[Tuple[Tuple[int, ...], int, float]]]:
        "按出发颜色分组的 (offset, target, prob) 列表"
        groups: List[List[Tuple[Tuple[int, ...], int, float]]] = [[] for _ in range(self.colors)]
        for offset, i, j, prob in zip(self.offsets, self.sources, self.targets, self.probs):
            groups[int(i)].append((tuple(int(c) for c in offset), int(j), float(prob)))
        return groups


@dataclass
class SandpileState:
    "稀疏沙堆构型 s(x, i)，以及漏损总量与倒塌次数"

    mass: Dict[Site, float] = field(default_factory=dict)
    leaked_total: float = 0.0
    topple_events: int = 0

    def total(self) -> float:
        return float(np.sum(np.fromiter(self.mass.values(), dtype=float))) if self.mass else 0.0

    def copy(self) -> "SandpileState":
        return SandpileState(dict(self.mass), self.leaked_total, self.topple_events)


@dataclass
class Odometer:
    "每个格点发出的沙量 u(x, i)"

    emitted: Dict[Site, float] = field(default_factory=dict)


class Shape(NamedTuple):
    "倒塌过的格点集合及其在 Z^d 上的投影"

    sites: FrozenSet[Site]
    points: FrozenSet[Tuple[int, ...]]


class Extent(NamedTuple):
    "某个方向上的内外半径; 锥内无格点时为 None"

    inner: Optional[float]
    outer: Optional[float]


class AssumptionReport(TypedDict):
    "模型假设检查结果; None 表示在给定步数内无法判定"

    leaky: bool
    irreducible: Optional[bool]
    aperiodic: Optional[bool]
    finite_support: bool
    horizon: int


class SpectralPoint(NamedTuple):
    "参数 t 处的谱半径、Perron 向量与梯度"

    t: np.ndarray
    rho: float
    right: np.ndarray
    left: np.ndarray
    grad: np.ndarray


class BoundarySample(NamedTuple):
    "水平集 {rho = 1} 上方向 u 对应的支撑点"

    u: np.ndarray
    h: float
    t: np.ndarray
    normal: np.ndarray
    kkt_residual: float


@dataclass(frozen=True, eq=False)
class GreenTable:
    "截断盒子上的 Green 函数 G((origin, source), (x, j))"

    source_color: int
    box_radius: int
    values: np.ndarray
    eps_stop: float
    tail_bound: float
    escaped_mass: float
    error_bound: float
    steps: int
    origin: Tuple[int, ...]

    @property
    def dimension(self) -> int:
        return self.values.ndim - 1

    @property
    def colors(self) -> int:
        return self.values.shape[0]

    def contains(self, point) -> bool:
        return all(abs(int(c)) <= self.box_radius for c in point)

    def value(self, point, color: int) -> float:
        "格点 point 处颜色 color 的值，盒子外返回 0"
        if not self.contains(point):
            return 0.0
        index = tuple(int(c) + self.box_radius for c in point)
        return float(self.values[(color,) + index])


class ShapeCurve(NamedTuple):
    "极限形状曲线的方向采样: 半径 1/h(u) 与衰减率 h(u)"

    directions: np.ndarray
    radii: np.ndarray
    gammas: np.ndarray
    samples: Tuple[BoundarySample, ...] = ()

    def as_star_body(self) -> "StarBody":
        return StarBody(self.directions, self.radii)


class Ellipsoid(NamedTuple):
    "椭球 {s : s^T A s <= 1}"

    matrix: np.ndarray


class CyclePoint(NamedTuple):
    "颜色循环的平均位移"

    point: Tuple[float, ...]
    length: int
    colors: Tuple[int, ...]


class CyclePointSet(NamedTuple):
    "循环点集合 X"

    dimension: int
    points: Tuple[CyclePoint, ...]

    def coordinates(self) -> np.ndarray:
        return np.array([p.point for p in self.points], dtype=float).reshape(-1, self.dimension)


@dataclass(frozen=True, eq=False)
class Polytope:
    "凸多面体: 顶点与 (单位外法向, 偏移) 表示的面"

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    degenerate: bool = False

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    def contains(self, points, tol: float = 1e-10) -> np.ndarray:
        "点是否在多面体内"
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(points @ self.normals.T <= self.offsets + tol, axis=1)


class StarBody(NamedTuple):
    "关于原点星形的集合，按方向采样半径"

    directions: np.ndarray
    radii: np.ndarray
    normals: Optional[np.ndarray] = None

    def boundary_points(self) -> np.ndarray:
        return self.directions * self.radii[:, None]


class RunManifest(TypedDict, total=False):
    "一次运行的记录"

    command: str
    spec_path: str
    spec_digest: str
    parameters: Dict[str, str]
    outputs: List[str]
    wall_clock: float
    topple_events: int
