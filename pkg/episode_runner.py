"""
Episode runner for the semfuse benchmark.
Binds simulator, calibration, map, strategy and policy into closed-loop episodes and runs
benchmark matrices in parallel worker processes.
"""
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from aggregation import AggregationStrategy, NBClassifier, build_strategy, nb_train
from aggregation.latest import GroundTruthStrategy
from calibration import fit_temperature, load_logit_file
from errors import InvalidInputError, NoPathError
from metrics import EpisodeResult, MetricsRow, count_detection_fn, count_detection_fp, format_metrics_table, \
    metrics_table, write_metrics_csv, write_results_jsonl
from policy import ShortestPathPolicy, build_policy, success_distance
from scene_manager import SceneManager, evaluation_scene_seed, training_scene_seed
from scene_sim import AgentPose, Observation, Scene, generate_scene, ground_truth_logits, load_scene, observe, \
    save_scene, simulate_calibration_stream
from schemas import EpisodeConfig, PerceptionConfig, PolicyKind, RunConfig, SceneSpec, StrategyConfig, \
    StrategyKind
from semantic_map import GridMap, project_observation

logger = logging.getLogger("episode_runner")

_GT_CONFIG = StrategyConfig(kind=StrategyKind.GROUND_TRUTH)


@dataclass
class EpisodeRun:
    """Full outcome of one simulated episode."""
    result: EpisodeResult
    grid: Optional[GridMap] = None
    strategy: Optional[AggregationStrategy] = None
    trajectory: List[AgentPose] = field(default_factory=list)
    samples: List[Tuple[np.ndarray, bool]] = field(default_factory=list)


def episode_seed(run_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([run_seed, index]).generate_state(1)[0])


def _result_fields(cfg: EpisodeConfig) -> Dict:
    return dict(
        episode_id=cfg.episode_id,
        scene_id=cfg.scene_id,
        strategy=cfg.strategy.name,
        strategy_kind=cfg.strategy.kind.value,
        policy=cfg.policy.value,
        profile=cfg.profile,
        target_class=cfg.target_class,
        use_calibration=cfg.strategy.use_calibration,
        use_uncertainty_found=cfg.strategy.use_uncertainty_found,
        config=cfg.model_dump(mode="json"),
    )


def _near_true_target(scene: Scene, target_class: int, pose: AgentPose, radius_m: float) -> bool:
    cells = scene.target_cells(target_class)
    if len(cells) == 0:
        return False
    centers = (cells + 0.5) * scene.resolution
    return bool(np.any(np.hypot(centers[:, 0] - pose.x, centers[:, 1] - pose.y) <= radius_m + 1e-9))


def simulate_episode(cfg: EpisodeConfig, scene: Scene, classifier: Optional[NBClassifier] = None,
                     keep_map: bool = False, record_trajectory: bool = False) -> EpisodeRun:
    """Run one closed-loop episode: observe, project, integrate, decide, move.

    Under the shortest-path policy a false found fixes the outcome but the agent continues to the
    goal so detection metrics cover the full trajectory. Unreachable targets give an invalid result.
    """
    if not 0 <= cfg.start_index < len(scene.start_poses):
        raise InvalidInputError(f"Scene {scene.scene_id} has no start pose {cfg.start_index}")
    start = scene.start_poses[cfg.start_index]
    target = cfg.target_class
    try:
        policy = build_policy(cfg.policy, scene, start, target, cfg.sensor.fov_rad)
        shortest_length = success_distance(scene, start, target, cfg.success_radius_m)
    except NoPathError as e:
        logger.warning(f"Episode {cfg.episode_id} is invalid: {e}")
        return EpisodeRun(EpisodeResult(valid=False, **_result_fields(cfg)))

    rng = np.random.default_rng(cfg.seed)
    t = cfg.temperature if cfg.strategy.use_calibration else 1.0
    is_ground_truth = cfg.strategy.kind == StrategyKind.GROUND_TRUTH
    strategy = build_strategy(cfg.strategy, target, cfg.success_radius_m, classifier)
    reference = GroundTruthStrategy(_GT_CONFIG, target, cfg.success_radius_m)
    grid, reference_grid = GridMap.for_scene(scene), GridMap.for_scene(scene)
    bboxes = [inst.bbox for inst in scene.instances_of(target)]

    digest = hashlib.sha256()
    fixed: List[Observation] = []
    if isinstance(policy, ShortestPathPolicy):
        # the fixed trajectory's observation stream is drawn up front, identical for every strategy
        fixed = [observe(scene, p, cfg.sensor, cfg.noise, rng) for p in policy.poses]
        for obs in fixed:
            digest.update(obs.digest_bytes())

    pose = start
    trajectory = [pose]
    traveled = 0.0
    rendered_union = np.zeros(scene.shape, dtype=bool)
    det_fn = 0
    outcome: Optional[str] = None
    found_step: Optional[int] = None
    steps_used = 0
    for step in range(cfg.max_steps):
        if step < len(fixed):
            obs = fixed[step]
        else:
            obs = observe(scene, pose, cfg.sensor, cfg.noise, rng)
            if not fixed:
                digest.update(obs.digest_bytes())
        gt_obs = dataclasses.replace(obs, logits=ground_truth_logits(obs.true_classes, scene.n_classes)
                                     .reshape(len(obs), scene.n_classes))
        gt_hits = project_observation(gt_obs, 1.0)
        hits = gt_hits if is_ground_truth else project_observation(obs, t)
        strategy.integrate(grid, hits, pose)
        reference.integrate(reference_grid, gt_hits, pose)

        mask = strategy.target_mask(grid)
        rendered_union |= mask
        det_fn += count_detection_fn(mask, reference.target_mask(reference_grid), bboxes)
        steps_used = step + 1

        if outcome is None:
            decision = strategy.decide_found(grid, pose, target)
            if decision.found:
                found_step = step
                outcome = "success" if _near_true_target(scene, target, pose, cfg.success_radius_m) else "found_fp"
        if outcome == "success":
            break
        if outcome == "found_fp":
            if not isinstance(policy, ShortestPathPolicy) or step >= policy.goal_step:
                break
        if step + 1 >= cfg.max_steps:
            break

        new_pose = policy.next_pose(step + 1, pose, grid, strategy)
        traveled += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        pose = new_pose
        if record_trajectory:
            trajectory.append(pose)

    outcome = outcome or "found_fn"
    result = EpisodeResult(
        valid=True,
        success=outcome == "success",
        found_fp=outcome == "found_fp",
        found_fn=outcome == "found_fn",
        det_fp_count=count_detection_fp(rendered_union, scene.bbox_mask(target)),
        det_fn_count=det_fn,
        steps_used=steps_used,
        found_step=found_step,
        path_length_m=traveled,
        shortest_length_m=shortest_length,
        stream_digest=digest.hexdigest(),
        **_result_fields(cfg),
    )
    samples = []
    if classifier is None and hasattr(strategy, "samples"):
        bbox_mask = scene.bbox_mask(target)
        samples = [(s.features, s.overlaps(bbox_mask)) for s in strategy.samples]
    return EpisodeRun(
        result=result,
        grid=grid if keep_map else None,
        strategy=strategy if keep_map else None,
        trajectory=trajectory if record_trajectory else [],
        samples=samples,
    )


def run_episode(cfg: EpisodeConfig, scene: Scene, classifier: Optional[NBClassifier] = None) -> EpisodeResult:
    return simulate_episode(cfg, scene, classifier).result


def _run_job(job: Tuple[EpisodeConfig, Scene, Optional[NBClassifier], bool]) -> Tuple[EpisodeResult, List[AgentPose]]:
    cfg, scene, classifier, record = job
    run = simulate_episode(cfg, scene, classifier, record_trajectory=record)
    return run.result, run.trajectory


def classifier_key(profile: str, use_calibration: bool) -> str:
    return f"stubborn_{profile}_{'cal' if use_calibration else 'raw'}"


def resolve_noise(perception: PerceptionConfig, max_range_m: float):
    return perception.resolve_noise().model_copy(update={"max_range_m": max_range_m})


def training_scenes(spec: SceneSpec, count: int, seed: int) -> List[Scene]:
    """Training scenes from the seed range reserved for tuning and classifier training."""
    return [generate_scene(spec, training_scene_seed(seed, i), scene_id=f"train_{i:04d}") for i in range(count)]


def make_episodes(run_config: RunConfig, scenes: Sequence[Scene], temperatures: Dict[str, float],
                  episodes: Optional[int] = None, strategies: Optional[Sequence[StrategyConfig]] = None,
                  policies: Optional[Sequence[PolicyKind]] = None, prefix: str = "ep") -> List[EpisodeConfig]:
    """Expand a run configuration into episode configurations.

    Base episode i picks a scene, start pose and target class deterministically from the run seed
    and is shared by every (strategy, policy, profile) combination.
    """
    if not scenes:
        raise InvalidInputError("No scenes to run episodes on")
    count = episodes if episodes is not None else run_config.episodes
    strategies = list(strategies if strategies is not None else run_config.strategies)
    policies = list(policies if policies is not None else run_config.policies)
    rng = np.random.default_rng(run_config.run_seed)
    configs = []
    for i in range(count):
        scene = scenes[i % len(scenes)]
        start_index = (i // len(scenes)) % len(scene.start_poses)
        classes = scene.target_classes()
        if run_config.target_classes is not None:
            classes = [c for c in classes if c in run_config.target_classes] or list(run_config.target_classes)
        target = int(classes[int(rng.integers(len(classes)))])
        seed = episode_seed(run_config.run_seed, i)
        for perception in run_config.perception:
            noise = resolve_noise(perception, run_config.sensor.max_range_m)
            for policy in policies:
                for strategy in strategies:
                    configs.append(EpisodeConfig(
                        episode_id=f"{prefix}{i:05d}-{perception.profile}-{policy.value}-{strategy.name}",
                        scene_id=scene.scene_id,
                        start_index=start_index,
                        target_class=target,
                        strategy=strategy,
                        policy=policy,
                        profile=perception.profile,
                        noise=noise,
                        temperature=temperatures[perception.profile],
                        sensor=run_config.sensor,
                        max_steps=run_config.max_steps,
                        success_radius_m=run_config.success_radius_m,
                        seed=seed,
                    ))
    return configs


class EpisodeRunner:
    def __init__(self, logs_dir: str = config.LOGS_DIR, workers: Optional[int] = None):
        """Initialize the episode runner.

        Args:
            logs_dir: Directory for logs
            workers: Worker processes for batches (default: SEMFUSE_WORKERS, then available cores)
        """
        self.logs_dir = logs_dir
        self.workers = workers or config.default_workers()
        Path(self.logs_dir).mkdir(parents=True, exist_ok=True)

        # Set up logging
        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(os.path.join(self.logs_dir, "episode_runner.log")),
                logging.StreamHandler()
            ]
        )
        self.logger = logging.getLogger("episode_runner")

    def run_episode(self, cfg: EpisodeConfig, scene: Scene, classifier: Optional[NBClassifier] = None,
                    keep_map: bool = False, record_trajectory: bool = False) -> EpisodeRun:
        return simulate_episode(cfg, scene, classifier, keep_map, record_trajectory)

    def run_batch(self, configs: Sequence[EpisodeConfig], scenes: Dict[str, Scene],
                  classifiers: Optional[Dict[str, NBClassifier]] = None,
                  record_trajectories: bool = False) -> List[Tuple[EpisodeResult, List[AgentPose]]]:
        """Run episodes in parallel; output is sorted by episode id regardless of completion order."""
        classifiers = classifiers or {}
        jobs = []
        for cfg in configs:
            if cfg.scene_id not in scenes:
                raise InvalidInputError(f"Episode {cfg.episode_id} references unknown scene {cfg.scene_id}")
            classifier = None
            if cfg.strategy.kind == StrategyKind.STUBBORN:
                classifier = classifiers.get(classifier_key(cfg.profile, cfg.strategy.use_calibration))
            jobs.append((cfg, scenes[cfg.scene_id], classifier, record_trajectories))

        self.logger.info(f"Running {len(jobs)} episodes on {self.workers} worker(s)")
        if self.workers <= 1 or len(jobs) <= 1:
            outputs = [_run_job(job) for job in jobs]
        else:
            chunksize = max(1, len(jobs) // (self.workers * 4))
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                outputs = list(pool.map(_run_job, jobs, chunksize=chunksize))

        outputs.sort(key=lambda item: item[0].episode_id)
        invalid = [r.episode_id for r, _ in outputs if not r.valid]
        if invalid:
            self.logger.warning(f"{len(invalid)} invalid episode(s) excluded from metrics: {', '.join(invalid[:5])}"
                                + (" ..." if len(invalid) > 5 else ""))
        return outputs

    def fit_temperatures(self, run_config: RunConfig) -> Dict[str, float]:
        """One temperature per perception profile: fixed, fitted on a logit file, or fitted on a simulated stream."""
        temperatures = {}
        n_classes = run_config.scenes.spec.n_classes
        for index, perception in enumerate(run_config.perception):
            if perception.temperature is not None:
                t = perception.temperature
            elif perception.logit_file is not None:
                dataset = load_logit_file(perception.logit_file)
                t = fit_temperature(dataset.logits, dataset.labels)
            else:
                noise = resolve_noise(perception, run_config.sensor.max_range_m)
                rng = np.random.default_rng([run_config.run_seed, config.TRAINING_SEED_OFFSET, index])
                dataset = simulate_calibration_stream(noise, run_config.calibration_stream_size, rng, n_classes)
                t = fit_temperature(dataset.logits, dataset.labels)
            temperatures[perception.profile] = float(t)
            self.logger.info(f"Profile {perception.profile}: temperature {t:.4f}")
        return temperatures

    def train_stubborn(self, run_config: RunConfig, temperatures: Dict[str, float]) -> Dict[str, NBClassifier]:
        """Train one classifier per (profile, calibration flag) used by a Stubborn strategy.

        Features come from shortest-path episodes on training scenes, labelled by whether the
        candidate component overlaps a true target box.
        """
        needed = sorted({s.use_calibration for s in run_config.strategies if s.kind == StrategyKind.STUBBORN})
        if not needed:
            return {}
        scenes = training_scenes(run_config.scenes.spec, max(1, min(run_config.stubborn_training_episodes, 16)),
                                 run_config.run_seed)
        scene_map = {s.scene_id: s for s in scenes}
        classifiers = {}
        for use_calibration in needed:
            collector = StrategyConfig(kind=StrategyKind.STUBBORN, use_calibration=use_calibration)
            episodes = make_episodes(run_config, scenes, temperatures, episodes=run_config.stubborn_training_episodes,
                                     strategies=[collector], policies=[PolicyKind.SHORTEST_PATH], prefix="train")
            by_profile: Dict[str, List[Tuple[np.ndarray, bool]]] = {}
            for cfg in episodes:
                run = simulate_episode(cfg, scene_map[cfg.scene_id])
                by_profile.setdefault(cfg.profile, []).extend(run.samples)
            for profile, samples in sorted(by_profile.items()):
                features = np.array([f for f, _ in samples]).reshape(-1, 4)
                labels = np.array([label for _, label in samples], dtype=bool)
                classifiers[classifier_key(profile, use_calibration)] = nb_train(features, labels)
                self.logger.info(f"Trained {classifier_key(profile, use_calibration)} on {len(samples)} samples")
        return classifiers

    def run_benchmark(self, run_config: RunConfig, scenes: Optional[List[Scene]] = None,
                      dump_trajectories: bool = False) -> List[MetricsRow]:
        """Run the full strategy x policy x profile matrix and write every output under output_dir.

        Outputs: run_config.json, temperatures.json, scenes/, classifiers/, results.jsonl,
        metrics.csv, metrics.txt and optionally trajectories/.
        """
        output_dir = run_config.output_dir
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        with open(os.path.join(output_dir, "run_config.json"), "w") as f:
            f.write(run_config.model_dump_json(indent=2) + "\n")

        scenes = scenes if scenes is not None else load_run_scenes(run_config, self.logs_dir)
        scene_dir = os.path.join(output_dir, "scenes")
        Path(scene_dir).mkdir(parents=True, exist_ok=True)
        for scene in scenes:
            save_scene(scene, os.path.join(scene_dir, f"{scene.scene_id}.json"))

        temperatures = self.fit_temperatures(run_config)
        write_temperatures(os.path.join(output_dir, "temperatures.json"), temperatures)

        classifiers = self.train_stubborn(run_config, temperatures)
        if classifiers:
            classifier_dir = os.path.join(output_dir, "classifiers")
            Path(classifier_dir).mkdir(parents=True, exist_ok=True)
            for key, classifier in classifiers.items():
                classifier.save(os.path.join(classifier_dir, f"{key}.txt"))

        configs = make_episodes(run_config, scenes, temperatures)
        outputs = self.run_batch(configs, {s.scene_id: s for s in scenes}, classifiers, dump_trajectories)

        if dump_trajectories:
            trajectory_dir = os.path.join(output_dir, "trajectories")
            Path(trajectory_dir).mkdir(parents=True, exist_ok=True)
            for result, trajectory in outputs:
                if trajectory:
                    write_trajectory(os.path.join(trajectory_dir, f"{result.episode_id}.csv"), trajectory)

        rows = _write_outputs(output_dir, [r for r, _ in outputs])
        self.logger.info(f"Wrote {len(outputs)} episode records and {len(rows)} metric rows to {output_dir}")
        return rows


def write_trajectory(path: str, trajectory: Sequence[AgentPose]) -> None:
    with open(path, "w") as f:
        f.write("step,x,y,theta\n")
        for step, pose in enumerate(trajectory):
            f.write(f"{step},{pose.x!r},{pose.y!r},{pose.theta!r}\n")


def write_temperatures(path: str, temperatures: Dict[str, float]) -> None:
    with open(path, "w") as f:
        json.dump(temperatures, f, indent=2, sort_keys=True)


def load_run_scenes(run_config: RunConfig, logs_dir: str = config.LOGS_DIR) -> List[Scene]:
    """Scenes from the configured directory, or generated from the scene spec."""
    if run_config.scenes.dir is not None:
        scenes = SceneManager(run_config.scenes.dir, logs_dir).load_all()
        return scenes[:run_config.scenes.count] if run_config.scenes.count else scenes
    seed = run_config.scenes.seed if run_config.scenes.seed is not None else run_config.run_seed
    return [generate_scene(run_config.scenes.spec, evaluation_scene_seed(seed, i))
            for i in range(run_config.scenes.count)]


def replay_episode(record: EpisodeResult, results_dir: str) -> EpisodeRun:
    """Re-run a recorded episode from its stored configuration and keep its final map."""
    if not record.config:
        raise InvalidInputError(f"Episode {record.episode_id} has no stored configuration")
    cfg = EpisodeConfig.model_validate(record.config)
    scene = load_scene(os.path.join(results_dir, "scenes", f"{cfg.scene_id}.json"))
    classifier = None
    if cfg.strategy.kind == StrategyKind.STUBBORN:
        path = os.path.join(results_dir, "classifiers", classifier_key(cfg.profile, cfg.strategy.use_calibration) + ".txt")
        classifier = NBClassifier.load(path)
    run = simulate_episode(cfg, scene, classifier, keep_map=True)
    if run.result.outcome != record.outcome:
        logger.warning(f"Replay of {record.episode_id} ended as {run.result.outcome}, recorded {record.outcome}")
    return run


def _write_outputs(output_dir: str, results: Sequence[EpisodeResult]) -> List[MetricsRow]:
    rows = metrics_table(results)
    write_results_jsonl(results, os.path.join(output_dir, "results.jsonl"))
    write_metrics_csv(rows, os.path.join(output_dir, "metrics.csv"))
    with open(os.path.join(output_dir, "metrics.txt"), "w") as f:
        f.write(format_metrics_table(rows) + "\n")
    return rows

