"""Run configuration: JSON file sections, defaults, overrides, validation.

Defaults mirror the reference operating point of the pipeline
(band half-width 0.2 m/s, DBSCAN eps 1.2 / 20 points, association
threshold 0.4, overlap 0.8, lambda weights 0.01, window size 4, the
37.5 x 16.7 degree sensor at 10 Hz with 5 cm/s velocity precision).
Unknown keys are rejected so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .embedding import ClusterInferParams
from .heuristic import TrackerParams
from .learn import FeatureSpec, LossWeights, SupConParams
from .preprocess import PreprocessParams

__all__ = ["ConfigError", "default_config", "load_config", "merge_overrides", "RunConfig"]


class ConfigError(ValueError):
    pass


def default_config() -> dict[str, dict[str, Any]]:
    return {
        "simulate": {
            "preset": "highway",  # highway | urban | paper7 | acceptance
            "count": 1,
            "seed": 1,
            "n_actors": 4,
            "noisy": True,
            "rate_hz": 10.0,
            "h_fov_deg": 37.5,
            "v_fov_deg": 16.7,
            "max_range_m": 300.0,
            "v_noise_sigma": 0.05,
            "pos_noise_sigma": 0.02,
            "outlier_rate": 0.002,
            "duration_s": 6.0,
        },
        "preprocess": {
            "v_abs_max": 60.0,
            "range_max": 300.0,
            "ransac_iters": 200,
            "ransac_inlier_dist": 0.15,
            "ransac_min_inliers": 50,
            "front_view_bearing_deg": 10.0,
            "static_band_halfwidth": 0.2,
            "band_mode": "angle_corrected",
            "seed": 0,
        },
        "tracker": {
            "eps": 1.2,
            "min_pts": 20,
            "assoc_dist": 1.0,
            "tau": 4,
        },
        "infer": {
            "p_threshold": 0.4,
            "overlap_threshold": 0.8,
            "max_instances": 256,
            "min_instance_points": 20,
        },
        "train": {
            "epochs": 200,
            "learning_rate": 5e-4,
            "seed": 0,
            "batch_size": 1,
            "window_size": 4,
            "stride": 5,
            "max_windows": 20,
            "hidden": [32, 32],
            "embed_dim": 8,
            "temperature": 0.1,
            "normalize_features": True,
            "include_velocity": True,
            "lambda_ins": 0.01,
            "lambda_var": 0.01,
            "lambda_reg": 1e-4,
            "mean_reduce": False,
            "max_points_per_window": 2000,
        },
        "eval": {
            "scale_100": True,
        },
        "serve": {
            "host": "127.0.0.1",
            "port": 8008,
            "lock_lease_s": 300.0,
            "max_points": 200000,
            "hue_v_min": -25.0,
            "hue_v_max": 25.0,
        },
    }


def _check_keys(merged: dict, defaults: dict, path: str = "") -> None:
    for key, value in merged.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {path}{key} must be an object")
            _check_keys(value, defaults[key], f"{path}{key}.")


def merge_overrides(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_overrides(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid with a JSON file, overlaid with explicit overrides."""
    cfg = default_config()
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if isinstance(file_cfg, dict) and "command" in file_cfg and "config" in file_cfg:
            file_cfg = file_cfg["config"]  # a previous run.json replays directly
        _check_keys(file_cfg, cfg)
        cfg = merge_overrides(cfg, file_cfg)
    if overrides:
        _check_keys(overrides, default_config())
        cfg = merge_overrides(cfg, overrides)
    return cfg


class RunConfig:
    """Typed views over the merged config dict."""

    def __init__(self, cfg: dict):
        self.raw = cfg

    def preprocess_params(self) -> PreprocessParams:
        s = self.raw["preprocess"]
        return PreprocessParams(
            v_abs_max=s["v_abs_max"],
            range_max=s["range_max"],
            ransac_iters=s["ransac_iters"],
            ransac_inlier_dist=s["ransac_inlier_dist"],
            ransac_min_inliers=s["ransac_min_inliers"],
            front_view_bearing_deg=s["front_view_bearing_deg"],
            static_band_halfwidth=s["static_band_halfwidth"],
            band_mode=s["band_mode"],
            seed=s["seed"],
        )

    def tracker_params(self, tau: int | None = None) -> TrackerParams:
        s = self.raw["tracker"]
        return TrackerParams(
            eps=s["eps"],
            min_pts=s["min_pts"],
            assoc_dist=s["assoc_dist"],
            tau=tau if tau is not None else s["tau"],
        )

    def infer_params(self) -> ClusterInferParams:
        s = self.raw["infer"]
        return ClusterInferParams(
            p_threshold=s["p_threshold"],
            overlap_threshold=s["overlap_threshold"],
            max_instances=s["max_instances"],
            min_instance_points=s["min_instance_points"],
        )

    def loss_weights(self) -> LossWeights:
        s = self.raw["train"]
        return LossWeights(
            lambda_ins=s["lambda_ins"],
            lambda_var=s["lambda_var"],
            lambda_reg=s["lambda_reg"],
            mean_reduce=s["mean_reduce"],
        )

    def supcon_params(self) -> SupConParams:
        s = self.raw["train"]
        return SupConParams(
            temperature=s["temperature"], normalize_features=s["normalize_features"]
        )

    def feature_spec(self, include_velocity: bool | None = None) -> FeatureSpec:
        s = self.raw["train"]
        return FeatureSpec(
            include_velocity=(
                s["include_velocity"] if include_velocity is None else include_velocity
            )
        )
