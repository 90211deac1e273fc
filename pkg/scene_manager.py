"""
Scene manager for the semfuse benchmark.
Generates, stores and looks up scene files; keeps a registry of what is on disk.
"""
import glob
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import config
from errors import InvalidInputError, InvalidParameterError
from scene_sim import Scene, generate_scene, load_scene, save_scene
from schemas import SceneSpec


def evaluation_scene_seed(base_seed: int, index: int) -> int:
    """Seeds below the training offset; never shared with training scenes."""
    return (base_seed + index) % config.TRAINING_SEED_OFFSET


def training_scene_seed(base_seed: int, index: int) -> int:
    return config.TRAINING_SEED_OFFSET + (base_seed + index) % config.TRAINING_SEED_OFFSET


class SceneManager:
    def __init__(self, scenes_dir: str = config.SCENES_DIR, logs_dir: str = config.LOGS_DIR):
        """Initialize the scene manager.

        Args:
            scenes_dir: Directory for storing scene files
            logs_dir: Directory for logs
        """
        self.scenes_dir = scenes_dir
        self.logs_dir = logs_dir

        # Create directories if they don't exist
        Path(self.scenes_dir).mkdir(parents=True, exist_ok=True)
        Path(self.logs_dir).mkdir(parents=True, exist_ok=True)

        # Initialize scene registry
        self.registry_path = os.path.join(self.scenes_dir, "registry.json")
        self.registry = self._load_registry()

        # Set up logging
        logging.basicConfig(
            level=logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(os.path.join(self.logs_dir, "scene_manager.log")),
                logging.StreamHandler()
            ]
        )
        self.logger = logging.getLogger("scene_manager")

    def _load_registry(self) -> Dict[str, Any]:
        """Load the scene registry from disk."""
        if os.path.exists(self.registry_path):
            try:
                with open(self.registry_path, 'r') as f:
                    return json.load(f)
            except json.JSONDecodeError:
                return {"scenes": {}}
        return {"scenes": {}}

    def _save_registry(self) -> None:
        """Save the scene registry to disk."""
        with open(self.registry_path, 'w') as f:
            json.dump(self.registry, f, indent=2, sort_keys=True)

    def list_scenes(self) -> Dict[str, Dict[str, Any]]:
        """List all registered scenes."""
        return self.registry["scenes"]

    def _register(self, scene: Scene, filename: str) -> None:
        self.registry["scenes"][scene.scene_id] = {
            "scene_id": scene.scene_id,
            "seed": scene.seed,
            "file": filename,
            "width": scene.width,
            "height": scene.height,
            "resolution": scene.resolution,
            "n_classes": scene.n_classes,
            "n_targets": len(scene.targets),
            "target_classes": scene.target_classes(),
        }

    def add_scene(self, scene: Scene) -> str:
        """Write a scene into the managed directory and register it.

        Returns:
            Path of the written scene file
        """
        filename = f"{scene.scene_id}.json"
        path = os.path.join(self.scenes_dir, filename)
        save_scene(scene, path)
        self._register(scene, filename)
        self._save_registry()
        return path

    def generate_scenes(self, count: int, seed: int, spec: Optional[SceneSpec] = None) -> List[str]:
        """Generate count scenes with consecutive evaluation seeds.

        Args:
            count: Number of scenes (>= 1)
            seed: Base seed
            spec: Scene generation parameters

        Returns:
            Ids of the generated scenes
        """
        if count < 1:
            raise InvalidParameterError(f"Scene count must be >= 1, got {count}")
        spec = spec or SceneSpec()
        ids = []
        for i in range(count):
            scene_seed = evaluation_scene_seed(seed, i)
            scene = generate_scene(spec, scene_seed)
            filename = f"{scene.scene_id}.json"
            save_scene(scene, os.path.join(self.scenes_dir, filename))
            self._register(scene, filename)
            ids.append(scene.scene_id)
            self.logger.info(f"Generated {scene.scene_id} ({spec.width}x{spec.height}, {len(scene.targets)} targets)")
        self._save_registry()
        return ids

    def get_scene_path(self, scene_id: str) -> Optional[str]:
        """Get the path to a scene file, or None if not found."""
        entry = self.registry["scenes"].get(scene_id)
        if entry is not None:
            path = os.path.join(self.scenes_dir, entry["file"])
        else:
            path = os.path.join(self.scenes_dir, f"{scene_id}.json")
        return path if os.path.exists(path) else None

    def load_scene(self, scene_id: str) -> Scene:
        path = self.get_scene_path(scene_id)
        if path is None:
            raise InvalidInputError(f"Scene {scene_id} not found in {self.scenes_dir}")
        return load_scene(path)

    def load_all(self) -> List[Scene]:
        """All scenes in the directory, registered or not, sorted by id."""
        paths = sorted(p for p in glob.glob(os.path.join(self.scenes_dir, "*.json"))
                       if os.path.basename(p) != "registry.json")
        if not paths:
            raise InvalidInputError(f"No scene files in {self.scenes_dir}")
        scenes = [load_scene(p) for p in paths]
        return sorted(scenes, key=lambda s: s.scene_id)

    def remove_scene(self, scene_id: str) -> bool:
        """Remove a scene.

        Args:
            scene_id: Id of the scene to remove

        Returns:
            True if removal succeeded, False otherwise
        """
        if scene_id not in self.registry["scenes"]:
            self.logger.error(f"Scene {scene_id} is not registered")
            return False

        path = os.path.join(self.scenes_dir, self.registry["scenes"][scene_id]["file"])
        try:
            if os.path.exists(path):
                os.remove(path)
        except OSError as e:
            self.logger.error(f"Error removing scene file: {e}")
            return False

        del self.registry["scenes"][scene_id]
        self._save_registry()

        self.logger.info(f"Scene {scene_id} removed successfully")
        return True

    def get_scene_info(self, scene_id: str) -> Optional[Dict[str, Any]]:
        """Get information about a scene, or None if not registered."""
        return self.registry["scenes"].get(scene_id)
