"""
Navigation policies for the semfuse benchmark.
A state-independent ground-truth shortest-path policy, and a frontier-exploration policy that
acts only on the strategy-rendered belief map.
"""
import heapq
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

import config
from aggregation import AggregationStrategy
from errors import InvalidInputError, NoPathError
from schemas import PolicyKind
from scene_sim import AgentPose, Scene
from semantic_map import GridMap

logger = logging.getLogger("policy")

Cell = Tuple[int, int]

SQRT2 = math.sqrt(2.0)
_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]
_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = np.ones((3, 3), dtype=bool)
# goal sets larger than this are searched without a heuristic
_HEURISTIC_GOAL_LIMIT = 16


@dataclass
class Path:
    waypoints: List[Cell]
    cost: float
    resolution: float = 1.0

    @property
    def length_m(self) -> float:
        return self.cost * self.resolution

    def __len__(self) -> int:
        return len(self.waypoints)


@dataclass
class PolicyState:
    kind: PolicyKind
    plan: List[Cell] = field(default_factory=list)
    replan: bool = True


def octile(a: Cell, b: Cell) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def neighbors(blocked: np.ndarray, cell: Cell) -> Iterable[Tuple[Cell, float]]:
    """8-connected moves; a diagonal may not cut an occupied corner."""
    h, w = blocked.shape
    x, y = cell
    for dx, dy, cost in _MOVES:
        nx, ny = x + dx, y + dy
        if not (0 <= nx < w and 0 <= ny < h) or blocked[ny, nx]:
            continue
        if dx and dy and (blocked[y, nx] or blocked[ny, x]):
            continue
        yield (nx, ny), cost


def _check_cell(blocked: np.ndarray, cell: Cell, what: str) -> None:
    h, w = blocked.shape
    if not (0 <= cell[0] < w and 0 <= cell[1] < h):
        raise InvalidInputError(f"{what} {cell} lies outside the grid")
    if blocked[cell[1], cell[0]]:
        raise NoPathError(f"{what} {cell} is not traversable")


def shortest_path_to_any(blocked: np.ndarray, start: Cell, goals: Sequence[Cell],
                         resolution: float = 1.0) -> Path:
    """Best-first search to the cheapest of several goals.

    Costs are 1 per cardinal and sqrt(2) per diagonal move. The heuristic is the octile distance
    to the nearest goal. Ties are broken by (f, h, flat cell index).

    Raises:
        NoPathError: start blocked, or no goal reachable
    """
    _check_cell(blocked, start, "Start")
    h, w = blocked.shape
    goal_set = {g for g in goals if 0 <= g[0] < w and 0 <= g[1] < h and not blocked[g[1], g[0]]}
    if not goal_set:
        raise NoPathError(f"No traversable goal among {len(goals)} candidates")
    goal_list = sorted(goal_set)

    if len(goal_list) <= _HEURISTIC_GOAL_LIMIT:
        def heuristic(cell: Cell) -> float:
            return min(octile(cell, g) for g in goal_list)
    else:
        def heuristic(cell: Cell) -> float:
            return 0.0

    best_g = {start: 0.0}
    parent = {start: None}
    h0 = heuristic(start)
    open_list = [(h0, h0, start[1] * w + start[0], start)]
    closed = set()
    while open_list:
        _, _, _, current = heapq.heappop(open_list)
        if current in closed:
            continue
        closed.add(current)
        if current in goal_set:
            waypoints = []
            node = current
            while node is not None:
                waypoints.append(node)
                node = parent[node]
            return Path(waypoints[::-1], best_g[current], resolution)
        for nxt, cost in neighbors(blocked, current):
            g = best_g[current] + cost
            if nxt not in closed and g < best_g.get(nxt, math.inf) - 1e-12:
                best_g[nxt] = g
                parent[nxt] = current
                hn = heuristic(nxt)
                heapq.heappush(open_list, (g + hn, hn, nxt[1] * w + nxt[0], nxt))
    raise NoPathError(f"No path from {start} to any of {len(goal_list)} goals")


def shortest_path(blocked: np.ndarray, start: Cell, goal: Cell, resolution: float = 1.0) -> Path:
    """Optimal 8-connected path from start to goal."""
    _check_cell(blocked, goal, "Goal")
    return shortest_path_to_any(blocked, start, [goal], resolution)


def distance_field(blocked: np.ndarray, start: Cell) -> np.ndarray:
    """Path cost in cells from start to every cell (inf where unreachable), same moves as the planner."""
    _check_cell(blocked, start, "Start")
    h, w = blocked.shape
    cost = np.full((h, w), math.inf)
    cost[start[1], start[0]] = 0.0
    heap = [(0.0, start[1] * w + start[0], start)]
    while heap:
        g, _, current = heapq.heappop(heap)
        if g > cost[current[1], current[0]]:
            continue
        for (nx, ny), step in neighbors(blocked, current):
            if g + step < cost[ny, nx] - 1e-12:
                cost[ny, nx] = g + step
                heapq.heappush(heap, (g + step, ny * w + nx, (nx, ny)))
    return cost


def success_distance(scene: Scene, start_pose: AgentPose, target_class: int,
                     radius_m: float = config.SUCCESS_RADIUS_M) -> float:
    """Shortest walk in meters from the start pose into the success region of a target class.

    The success region is every position within radius_m of a target cell center. The walk
    goes through free cells with the planner's moves and may stop part way along its last
    segment, so the value never exceeds the length traveled by an agent that succeeded.

    Raises:
        NoPathError: no reachable free cell lies close enough to a target cell
    """
    res = scene.resolution
    targets = scene.bbox_mask(target_class) & (scene.classes == target_class)
    if not targets.any():
        raise NoPathError(f"Scene {scene.scene_id} has no target cell of class {target_class}")
    start = scene.cell_of(start_pose.x, start_pose.y)
    cx, cy = scene.cell_center(start)
    offset = math.hypot(start_pose.x - cx, start_pose.y - cy)

    field_m = distance_field(scene.occupied, start) * res
    to_target = ndimage.distance_transform_edt(~targets, sampling=res)
    candidates = np.isfinite(field_m) & (to_target <= radius_m + SQRT2 * res)
    if not candidates.any():
        raise NoPathError(f"No reachable cell within {radius_m} m of class {target_class}")
    walk = field_m + np.maximum(0.0, to_target - radius_m)
    return max(0.0, float(walk[candidates].min()) - offset)


def _heading(ax: float, ay: float, bx: float, by: float, fallback: float) -> float:
    if math.isclose(ax, bx, abs_tol=1e-12) and math.isclose(ay, by, abs_tol=1e-12):
        return fallback
    return math.atan2(by - ay, bx - ax)


def walk_polyline(points: np.ndarray, step_m: float) -> List[Tuple[float, float, float]]:
    """Positions along a polyline with motion headings.

    Each move covers at most step_m and ends early at the next vertex, so the agent turns only
    at vertices and the summed moves equal the polyline length.
    """
    out = []
    for a, b in zip(points[:-1], points[1:]):
        dx, dy = float(b[0] - a[0]), float(b[1] - a[1])
        length = math.hypot(dx, dy)
        if length <= 1e-12:
            continue
        theta = math.atan2(dy, dx)
        n_steps = int(math.ceil(length / step_m - 1e-9))
        for i in range(1, n_steps + 1):
            frac = min(i * step_m, length) / length
            out.append((float(a[0] + frac * dx), float(a[1] + frac * dy), theta))
    return out


def _route_from(pose: AgentPose, centers: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Route points after the pose; an off-center pose first returns to its own cell center."""
    if not centers:
        return []
    if math.hypot(pose.x - centers[0][0], pose.y - centers[0][1]) < 1e-9:
        return centers[1:]
    return centers


class NavigationPolicy(ABC):
    kind: PolicyKind

    def __init__(self, scene: Scene, start_pose: AgentPose, step_length_m: float = config.STEP_LENGTH_M):
        if not scene.is_valid_pose(start_pose):
            raise InvalidInputError(f"Start pose {start_pose} is not on a free cell")
        self.scene = scene
        self.start_pose = start_pose
        self.step_length_m = step_length_m
        self.state = PolicyState(self.kind)

    @abstractmethod
    def next_pose(self, step: int, pose: AgentPose, grid: GridMap, strategy: AggregationStrategy) -> AgentPose:
        """Pose for the given step index (step 0 is the start pose)."""


class ShortestPathPolicy(NavigationPolicy):
    """Follows the ground-truth shortest path to the nearest cell next to a target instance.

    The pose sequence never depends on perception. Past the end of the path the agent stays at
    the goal facing the nearest target cell.
    """

    kind = PolicyKind.SHORTEST_PATH

    def __init__(self, scene: Scene, start_pose: AgentPose, target_class: int,
                 step_length_m: float = config.STEP_LENGTH_M):
        super().__init__(scene, start_pose, step_length_m)
        goals = scene.goal_cells(target_class)
        start = scene.cell_of(start_pose.x, start_pose.y)
        self.path = shortest_path_to_any(scene.occupied, start, goals, scene.resolution)
        self.state.plan = list(self.path.waypoints)
        self.state.replan = False
        self.poses = self._trajectory(target_class)

    def _trajectory(self, target_class: int) -> List[AgentPose]:
        scene = self.scene
        points = [(self.start_pose.x, self.start_pose.y)]
        points += _route_from(self.start_pose, [scene.cell_center(c) for c in self.path.waypoints])
        poses = [self.start_pose]
        if len(points) > 1:
            poses += [AgentPose(x, y, th) for x, y, th in walk_polyline(np.array(points), self.step_length_m)]

        gx, gy = points[-1]
        targets = scene.target_cells(target_class)
        centers = (targets + 0.5) * scene.resolution
        nearest = centers[int(np.argmin(np.hypot(centers[:, 0] - gx, centers[:, 1] - gy)))]
        facing = _heading(gx, gy, float(nearest[0]), float(nearest[1]), poses[-1].theta)
        if not math.isclose(facing, poses[-1].theta, abs_tol=1e-12):
            poses.append(AgentPose(gx, gy, facing))
        return poses

    @property
    def shortest_length_m(self) -> float:
        return self.path.length_m

    @property
    def goal_step(self) -> int:
        return len(self.poses) - 1

    def pose_at(self, step: int) -> AgentPose:
        return self.poses[min(step, self.goal_step)]

    def next_pose(self, step: int, pose: AgentPose, grid: GridMap, strategy: AggregationStrategy) -> AgentPose:
        return self.pose_at(step)


class FrontierPolicy(NavigationPolicy):
    """Goes to the rendered target if any, else explores the nearest frontier of the belief map.

    Unknown cells count as traversable. Moves into truly occupied cells are blocked and force a replan.
    """

    kind = PolicyKind.FRONTIER

    def __init__(self, scene: Scene, start_pose: AgentPose, step_length_m: float = config.STEP_LENGTH_M,
                 fov_rad: float = config.SENSOR_FOV_RAD, replan_every: int = config.FRONTIER_REPLAN_EVERY):
        super().__init__(scene, start_pose, step_length_m)
        self.fov_rad = fov_rad
        self.replan_every = replan_every
        self.route: List[Tuple[float, float]] = []
        self.steps_since_plan = 0
        self.planned_targets: Optional[np.ndarray] = None
        self.visited = {scene.cell_of(start_pose.x, start_pose.y)}

    def believed_blocked(self, grid: GridMap, strategy: AggregationStrategy) -> np.ndarray:
        return grid.occupancy | (strategy.rendered_classes(grid) == config.WALL_CLASS)

    def frontier_cells(self, grid: GridMap, blocked: np.ndarray) -> np.ndarray:
        """Observed free cells 4-adjacent to unknown space."""
        unknown_border = ndimage.binary_dilation(~grid.observed, structure=_FOUR)
        return grid.observed & ~blocked & unknown_border

    def _needs_replan(self, blocked: np.ndarray, targets: np.ndarray) -> bool:
        if self.state.replan or not self.state.plan:
            return True
        if any(blocked[y, x] for x, y in self.state.plan):
            return True
        if self.planned_targets is None or not np.array_equal(self.planned_targets, targets):
            return True
        return self.steps_since_plan >= self.replan_every

    def _plan(self, cell: Cell, blocked: np.ndarray, targets: np.ndarray, grid: GridMap) -> List[Cell]:
        if targets.any():
            ring = ndimage.binary_dilation(targets, structure=_EIGHT) & ~blocked & ~targets
            if ring[cell[1], cell[0]]:
                return []
            goals = ring
        else:
            goals = self.frontier_cells(grid, blocked)
            for vx, vy in self.visited:
                goals[vy, vx] = False
        iy, ix = np.nonzero(goals)
        if len(ix) == 0:
            return []
        local = blocked.copy()
        local[cell[1], cell[0]] = False
        try:
            path = shortest_path_to_any(local, cell, list(zip(ix.tolist(), iy.tolist())), grid.resolution)
        except NoPathError:
            return []
        return path.waypoints

    def next_pose(self, step: int, pose: AgentPose, grid: GridMap, strategy: AggregationStrategy) -> AgentPose:
        cell = self.scene.cell_of(pose.x, pose.y)
        blocked = self.believed_blocked(grid, strategy)
        targets = strategy.target_mask(grid)
        if self._needs_replan(blocked, targets):
            self.state.plan = self._plan(cell, blocked, targets, grid)
            self.route = _route_from(pose, [self.scene.cell_center(c) for c in self.state.plan])
            self.planned_targets = targets.copy()
            self.steps_since_plan = 0
            self.state.replan = False
        self.steps_since_plan += 1

        if not self.route:
            return self._idle(pose, grid, blocked, targets)

        points = np.array([(pose.x, pose.y)] + self.route)
        moves = walk_polyline(points, self.step_length_m)
        if not moves:
            self.route = []
            return self._idle(pose, grid, blocked, targets)
        x, y, theta = moves[0]
        new_cell = self.scene.cell_of(x, y)
        if not self._can_move(cell, new_cell):
            self.state.replan = True
            return AgentPose(pose.x, pose.y, theta)
        moved = math.hypot(x - pose.x, y - pose.y)
        passed = np.cumsum(np.hypot(*np.diff(points, axis=0).T)) <= moved + 1e-9
        del self.route[:int(passed.sum())]
        self.visited.add(new_cell)
        if not self.route:
            self.state.plan = []
        return AgentPose(x, y, theta)

    def _can_move(self, cell: Cell, new_cell: Cell) -> bool:
        """Truly occupied cells block the move, and so does a diagonal past an occupied corner."""
        occupied = self.scene.occupied
        if not self.scene.in_bounds(new_cell) or occupied[new_cell[1], new_cell[0]]:
            return False
        if new_cell[0] != cell[0] and new_cell[1] != cell[1]:
            return not (occupied[cell[1], new_cell[0]] or occupied[new_cell[1], cell[0]])
        return True

    def _idle(self, pose: AgentPose, grid: GridMap, blocked: np.ndarray, targets: np.ndarray) -> AgentPose:
        if targets.any():
            iy, ix = np.nonzero(targets)
            centers = grid.cell_centers(np.stack([ix, iy], axis=1))
            k = int(np.argmin(np.hypot(centers[:, 0] - pose.x, centers[:, 1] - pose.y)))
            return AgentPose(pose.x, pose.y, _heading(pose.x, pose.y, centers[k, 0], centers[k, 1], pose.theta))
        if self.frontier_cells(grid, blocked).any() or not grid.observed.any():
            theta = math.remainder(pose.theta + self.fov_rad, 2.0 * math.pi)
            return AgentPose(pose.x, pose.y, theta)
        return pose


def build_policy(kind: PolicyKind, scene: Scene, start_pose: AgentPose, target_class: int,
                 fov_rad: float = config.SENSOR_FOV_RAD) -> NavigationPolicy:
    if kind == PolicyKind.SHORTEST_PATH:
        return ShortestPathPolicy(scene, start_pose, target_class)
    return FrontierPolicy(scene, start_pose, fov_rad=fov_rad)
