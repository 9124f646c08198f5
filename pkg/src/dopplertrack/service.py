"""Annotation HTTP service.

Human-in-the-loop labeling over simulated or recorded sequences:
inspect aligned windows, re-cluster a scene with tuned parameters,
accept or reject the proposal, fix labels by hand (merge, split,
reassign, delete) with undo, save, and watch metrics against ground
truth when it exists.

Working labels live in ``<scene>/annotations/``; ground-truth labels,
when present, stay untouched in ``<scene>/labels/``. Re-clustering runs
off the request path: the POST returns a job id to poll, and the
proposal only replaces the working labels on an explicit accept.

Mutating endpoints require a lock token (header ``x-lock-token``)
acquired via POST /api/v1/scenes/{id}/lock; leases expire so a crashed
client cannot wedge a scene. Edit requests may carry an ``edit_token``;
retrying the same token replays the stored response instead of
reapplying the edit.
"""

from __future__ import annotations

import secrets
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Header, HTTPException
from fastapi.staticfiles import StaticFiles

from . import dataset_io
from .config import RunConfig, default_config
from .core import InstanceLabeling
from .heuristic import TrackerParams, build_window, dbscan, heuristic_track
from .metrics import evaluate
from .preprocess import PreprocessParams, preprocess_frame
from .volumes import build_moving_volumes

API = "/api/v1"


class SceneSession:
    """Mutable annotation state for one scene."""

    def __init__(self, seq_dir: Path):
        self.seq_dir = seq_dir
        self.scene_id = seq_dir.name
        self.seq = dataset_io.load_sequence(seq_dir)
        ann_dir = seq_dir / "annotations"
        if ann_dir.is_dir() and len(list(ann_dir.glob("*.label"))) == len(self.seq.frames):
            self.working = InstanceLabeling(
                [dataset_io.read_labels(ann_dir / f"{i:06d}.label") for i in range(len(self.seq.frames))]
            )
            self.dirty = False
        else:
            self.working = InstanceLabeling(
                [np.zeros(len(f), dtype=np.uint32) for f in self.seq.frames]
            )
            self.dirty = False
        self.undo_stack: list[list[tuple[int, np.ndarray, np.ndarray]]] = []
        self.edit_responses: dict[str, dict] = {}
        self.lock_token: str | None = None
        self.lock_expires = 0.0
        self.lock_client = ""
        self.mutex = threading.Lock()
        self._point_index: dict[int, tuple[int, int]] | None = None
        self._pre_cache: dict[int, object] = {}

    # -- lock protocol ------------------------------------------------

    def acquire_lock(self, client: str, lease_s: float) -> dict:
        now = time.time()
        if self.lock_token and now < self.lock_expires and self.lock_client != client:
            raise HTTPException(409, f"scene locked by {self.lock_client!r}")
        self.lock_token = secrets.token_hex(16)
        self.lock_expires = now + lease_s
        self.lock_client = client
        return {"token": self.lock_token, "expires_in_s": lease_s, "client": client}

    def check_lock(self, token: str | None) -> None:
        if not self.lock_token or time.time() >= self.lock_expires:
            raise HTTPException(409, "no active lock; acquire one first")
        if token != self.lock_token:
            raise HTTPException(409, "lock held by another client")

    def release_lock(self, token: str | None) -> None:
        self.check_lock(token)
        self.lock_token = None
        self.lock_client = ""

    # -- label bookkeeping ---------------------------------------------

    def point_lookup(self) -> dict[int, tuple[int, int]]:
        if self._point_index is None:
            self._point_index = {
                int(pid): (fi, idx)
                for fi, frame in enumerate(self.seq.frames)
                for idx, pid in enumerate(frame.point_ids)
            }
        return self._point_index

    def instance_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = {}
        for lab in self.working.per_frame:
            ids, counts = np.unique(lab[lab != 0], return_counts=True)
            for i, c in zip(ids, counts):
                sizes[int(i)] = sizes.get(int(i), 0) + int(c)
        return sizes

    def apply_label_change(self, changes: list[tuple[int, np.ndarray, np.ndarray]]) -> None:
        """changes: (frame index, point indices, new labels); records undo."""
        undo = []
        new_frames = list(self.working.per_frame)
        for fi, idx, new_vals in changes:
            old = new_frames[fi][idx].copy()
            undo.append((fi, idx.copy(), old))
            arr = new_frames[fi].copy()
            arr[idx] = new_vals
            new_frames[fi] = arr
        self.working = InstanceLabeling(new_frames)
        self.undo_stack.append(undo)
        if len(self.undo_stack) > 100:
            self.undo_stack.pop(0)
        self.dirty = True

    def undo(self) -> int:
        if not self.undo_stack:
            raise HTTPException(422, "nothing to undo")
        undo = self.undo_stack.pop()
        new_frames = list(self.working.per_frame)
        changed = 0
        for fi, idx, old_vals in reversed(undo):
            arr = new_frames[fi].copy()
            arr[idx] = old_vals
            new_frames[fi] = arr
            changed += len(idx)
        self.working = InstanceLabeling(new_frames)
        self.dirty = True
        return changed


class JobStore:
    def __init__(self):
        self.jobs: dict[str, dict] = {}
        self.mutex = threading.Lock()

    def create(self) -> str:
        job_id = uuid.uuid4().hex
        with self.mutex:
            self.jobs[job_id] = {"status": "running"}
        return job_id

    def finish(self, job_id: str, **payload) -> None:
        with self.mutex:
            self.jobs[job_id] = {"status": "done", **payload}

    def fail(self, job_id: str, message: str) -> None:
        with self.mutex:
            self.jobs[job_id] = {"status": "error", "error": message}

    def get(self, job_id: str) -> dict:
        with self.mutex:
            job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, "unknown job")
        return job


def _summaries(labels: InstanceLabeling) -> dict:
    sizes: dict[int, int] = {}
    frames_seen: dict[int, int] = {}
    for lab in labels.per_frame:
        ids, counts = np.unique(lab[lab != 0], return_counts=True)
        for i, c in zip(ids, counts):
            sizes[int(i)] = sizes.get(int(i), 0) + int(c)
            frames_seen[int(i)] = frames_seen.get(int(i), 0) + 1
    return {
        "instances": len(sizes),
        "labeled_points": int(sum(sizes.values())),
        "per_instance": [
            {"id": i, "points": sizes[i], "frames": frames_seen[i]} for i in sorted(sizes)
        ],
    }


def _verify_routes(session: SceneSession, pred: InstanceLabeling, trk: TrackerParams, pre_params: PreprocessParams) -> list[dict]:
    """Compare nearest-neighbor association against re-clustering the
    compensated volume; report frame-pair clusters where the two routes
    disagree on same-instance grouping."""
    frames = session.seq.frames
    disagreements = []
    volumes = build_moving_volumes(frames, None, pre_params, trk)
    for volume in volumes:
        if len(volume) == 0:
            continue
        regroup = dbscan(volume.positions, trk.eps, trk.min_pts)
        # route A ids per point of the volume, via the prediction
        route_a = np.zeros(len(volume), dtype=np.int64)
        for fi in np.unique(volume.frame_index):
            sel = volume.frame_index == fi
            kept = ~preprocess_frame(frames[fi], pre_params).removed
            kept_idx = np.flatnonzero(kept)
            route_a[sel] = pred[fi][kept_idx[volume.frame_point_index[sel]]]
        clusters = np.unique(volume.cluster_index)
        reps = []
        for c in clusters:
            members = np.flatnonzero(volume.cluster_index == c)
            a_ids, a_counts = np.unique(route_a[members], return_counts=True)
            b_ids, b_counts = np.unique(regroup[members], return_counts=True)
            reps.append(
                (
                    int(volume.frame_index[members[0]]),
                    int(a_ids[np.argmax(a_counts)]),
                    int(b_ids[np.argmax(b_counts)]),
                )
            )
        for i in range(len(reps)):
            for j in range(i + 1, len(reps)):
                same_a = reps[i][1] == reps[j][1] and reps[i][1] != 0
                same_b = reps[i][2] == reps[j][2] and reps[i][2] >= 0
                if same_a != same_b:
                    disagreements.append(
                        {
                            "window_t": volume.t,
                            "cluster_frames": [reps[i][0], reps[j][0]],
                            "nn_route_same": bool(same_a),
                            "recluster_route_same": bool(same_b),
                        }
                    )
        if len(disagreements) > 200:
            break
    return disagreements


def create_app(data_root: str, cfg: dict | None = None, ui_dist: str | Path | None = None) -> FastAPI:
    cfg = cfg or default_config()
    run = RunConfig(cfg)
    serve_cfg = cfg["serve"]
    root = Path(data_root)
    app = FastAPI(title="dopplertrack annotation service", version="1")
    sessions: dict[str, SceneSession] = {}
    sessions_mutex = threading.Lock()
    jobs = JobStore()

    def get_session(scene_id: str) -> SceneSession:
        with sessions_mutex:
            if scene_id not in sessions:
                seq_dir = root / scene_id
                if not (seq_dir / "scans").is_dir():
                    raise HTTPException(404, f"unknown scene {scene_id!r}")
                sessions[scene_id] = SceneSession(seq_dir)
            return sessions[scene_id]

    @app.get(API + "/scenes")
    def list_scenes() -> list[dict]:
        out = []
        for seq_dir in dataset_io.list_sequences(root):
            ann = seq_dir / "annotations"
            n_scans = len(list((seq_dir / "scans").glob("*.bin")))
            labeled = ann.is_dir() and len(list(ann.glob("*.label"))) == n_scans
            out.append(
                {
                    "id": seq_dir.name,
                    "frames": n_scans,
                    "status": "labeled" if labeled else "unlabeled",
                    "has_ground_truth": (seq_dir / "labels").is_dir(),
                }
            )
        return out

    @app.get(API + "/scenes/{scene_id}/window")
    def get_window(scene_id: str, t: int = 0, tau: int | None = None) -> dict:
        session = get_session(scene_id)
        frames = session.seq.frames
        if not (0 <= t < len(frames)):
            raise HTTPException(400, f"t must be in [0, {len(frames) - 1}]")
        tau = tau if tau is not None else cfg["tracker"]["tau"]
        if tau < 1:
            raise HTTPException(400, "tau must be >= 1")
        lo = max(0, t + 1 - tau)
        member = frames[lo : t + 1]
        window = build_window(member, None, tau=len(member))

        pre_params = run.preprocess_params()
        dyn_parts = []
        lab_parts = []
        for fi in range(lo, t + 1):
            if fi not in session._pre_cache:
                session._pre_cache[fi] = preprocess_frame(frames[fi], pre_params)
            pre = session._pre_cache[fi]
            dyn = np.zeros(len(frames[fi]), dtype=bool)
            dyn[~pre.removed] = pre.dynamic_mask
            dyn_parts.append(dyn)
            lab_parts.append(session.working[fi])
        dynamic = np.concatenate(dyn_parts)
        labels = np.concatenate(lab_parts)

        n = len(window)
        stride = max(1, int(np.ceil(n / serve_cfg["max_points"])))
        sel = np.arange(0, n, stride)
        return {
            "scene": scene_id,
            "t": t,
            "tau": tau,
            "frame_range": [lo, t],
            "count": int(sel.size),
            "total_points": n,
            "decimation_stride": stride,
            "positions": window.positions[sel].round(4).tolist(),
            "velocities": window.velocities[sel].round(4).tolist(),
            "frame_index": (window.frame_index[sel] + lo).tolist(),
            "point_ids": window.point_ids[sel].tolist(),
            "labels": labels[sel].tolist(),
            "dynamic": dynamic[sel].astype(int).tolist(),
            "hue": {
                "v_min": serve_cfg["hue_v_min"],
                "v_max": serve_cfg["hue_v_max"],
                "convention": "low hue = fast approach (negative Doppler)",
            },
        }

    @app.post(API + "/scenes/{scene_id}/lock")
    def acquire_lock(scene_id: str, body: dict = Body(default={})) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            return session.acquire_lock(str(body.get("client", "anonymous")), serve_cfg["lock_lease_s"])

    @app.delete(API + "/scenes/{scene_id}/lock")
    def release_lock(scene_id: str, x_lock_token: str | None = Header(default=None)) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            session.release_lock(x_lock_token)
        return {"released": True}

    @app.post(API + "/scenes/{scene_id}/recluster", status_code=202)
    def recluster(
        scene_id: str,
        body: dict = Body(default={}),
        x_lock_token: str | None = Header(default=None),
    ) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            session.check_lock(x_lock_token)
        try:
            trk = TrackerParams(
                eps=float(body.get("eps", cfg["tracker"]["eps"])),
                min_pts=int(body.get("min_pts", cfg["tracker"]["min_pts"])),
                assoc_dist=float(body.get("assoc_dist", cfg["tracker"]["assoc_dist"])),
                tau=int(body.get("tau", cfg["tracker"]["tau"])),
            )
            base_pre = run.preprocess_params()
            pre_params = PreprocessParams(
                v_abs_max=base_pre.v_abs_max,
                range_max=base_pre.range_max,
                ransac_iters=base_pre.ransac_iters,
                ransac_inlier_dist=base_pre.ransac_inlier_dist,
                ransac_min_inliers=base_pre.ransac_min_inliers,
                front_view_bearing_deg=base_pre.front_view_bearing_deg,
                static_band_halfwidth=float(
                    body.get("static_band", base_pre.static_band_halfwidth)
                ),
                band_mode=base_pre.band_mode,
                seed=base_pre.seed,
            )
        except (TypeError, ValueError) as exc:
            raise HTTPException(422, f"invalid parameters: {exc}") from exc
        verify = bool(body.get("verify", False))
        job_id = jobs.create()
        proposals: dict = app.state.proposals

        def work() -> None:
            try:
                pred = heuristic_track(
                    session.seq.frames, pre_params=pre_params, trk_params=trk
                )
                payload = {
                    "proposal": _summaries(pred),
                    "params": {
                        "eps": trk.eps,
                        "min_pts": trk.min_pts,
                        "assoc_dist": trk.assoc_dist,
                        "tau": trk.tau,
                        "static_band": pre_params.static_band_halfwidth,
                    },
                }
                if any((lab != 0).any() for lab in session.working.per_frame):
                    try:
                        payload["metrics_vs_current"] = evaluate(session.working, pred).as_dict(
                            scale_100=True
                        )
                    except ValueError:
                        payload["metrics_vs_current"] = None
                else:
                    payload["metrics_vs_current"] = None
                if verify:
                    payload["verify_disagreements"] = _verify_routes(
                        session, pred, trk, pre_params
                    )
                jobs.finish(job_id, **payload)
                with session.mutex:
                    proposals[job_id] = pred
            except Exception as exc:  # noqa: BLE001
                jobs.fail(job_id, str(exc))

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id}

    @app.get(API + "/scenes/{scene_id}/jobs/{job_id}")
    def job_status(scene_id: str, job_id: str) -> dict:
        get_session(scene_id)
        return jobs.get(job_id)

    @app.post(API + "/scenes/{scene_id}/accept")
    def accept(
        scene_id: str,
        body: dict = Body(...),
        x_lock_token: str | None = Header(default=None),
    ) -> dict:
        session = get_session(scene_id)
        job_id = body.get("job_id")
        proposal = app.state.proposals.get(job_id)
        if proposal is None:
            raise HTTPException(422, "unknown or unfinished proposal job")
        with session.mutex:
            session.check_lock(x_lock_token)
            changes = [
                (fi, np.arange(len(proposal[fi])), proposal[fi].copy())
                for fi in range(len(proposal))
            ]
            session.apply_label_change(changes)
        return {"accepted": True, "summary": _summaries(session.working)}

    def _edit_changes(session: SceneSession, body: dict) -> list[tuple[int, np.ndarray, np.ndarray]]:
        kind = body.get("kind")
        sizes = session.instance_sizes()
        lookup = session.point_lookup()

        def points_of(iid: int) -> list[tuple[int, int]]:
            out = []
            for fi, lab in enumerate(session.working.per_frame):
                for idx in np.flatnonzero(lab == iid):
                    out.append((fi, int(idx)))
            return out

        if kind == "merge":
            id_a, id_b = body.get("id_a"), body.get("id_b")
            if id_a not in sizes or id_b not in sizes or id_a == id_b:
                raise HTTPException(422, "merge needs two distinct existing instance ids")
            changes = []
            for fi, lab in enumerate(session.working.per_frame):
                idx = np.flatnonzero(lab == id_b)
                if idx.size:
                    changes.append((fi, idx, np.full(idx.size, id_a, dtype=np.uint32)))
            return changes
        if kind == "split":
            iid = body.get("id")
            new_id = body.get("new_id")
            point_ids = body.get("point_ids") or []
            if iid not in sizes:
                raise HTTPException(422, f"unknown instance id {iid}")
            if new_id is None or new_id in sizes or new_id == 0:
                raise HTTPException(422, "split needs an unused new_id >= 1")
            if not point_ids:
                raise HTTPException(422, "split needs a nonempty point set")
            if len(point_ids) >= sizes[iid]:
                raise HTTPException(422, "split set must be a strict subset of the instance")
            per_frame: dict[int, list[int]] = {}
            for pid in point_ids:
                loc = lookup.get(int(pid))
                if loc is None:
                    raise HTTPException(422, f"unknown point id {pid}")
                fi, idx = loc
                if session.working[fi][idx] != iid:
                    raise HTTPException(422, f"point {pid} does not belong to instance {iid}")
                per_frame.setdefault(fi, []).append(idx)
            return [
                (fi, np.array(sorted(idxs)), np.full(len(idxs), new_id, dtype=np.uint32))
                for fi, idxs in sorted(per_frame.items())
            ]
        if kind == "reassign":
            target = body.get("id")
            point_ids = body.get("point_ids") or []
            if target is None or target < 0:
                raise HTTPException(422, "reassign needs a target id >= 0")
            if not point_ids:
                raise HTTPException(422, "reassign needs a nonempty point set")
            per_frame = {}
            for pid in point_ids:
                loc = lookup.get(int(pid))
                if loc is None:
                    raise HTTPException(422, f"unknown point id {pid}")
                per_frame.setdefault(loc[0], []).append(loc[1])
            return [
                (fi, np.array(sorted(idxs)), np.full(len(idxs), target, dtype=np.uint32))
                for fi, idxs in sorted(per_frame.items())
            ]
        if kind == "delete":
            iid = body.get("id")
            if iid not in sizes:
                raise HTTPException(422, f"unknown instance id {iid}")
            changes = []
            for fi, lab in enumerate(session.working.per_frame):
                idx = np.flatnonzero(lab == iid)
                if idx.size:
                    changes.append((fi, idx, np.zeros(idx.size, dtype=np.uint32)))
            return changes
        raise HTTPException(422, f"unknown edit kind {kind!r}")

    @app.post(API + "/scenes/{scene_id}/edits")
    def apply_edit(
        scene_id: str,
        body: dict = Body(...),
        x_lock_token: str | None = Header(default=None),
    ) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            session.check_lock(x_lock_token)
            token = body.get("edit_token")
            if token and token in session.edit_responses:
                return session.edit_responses[token]
            changes = _edit_changes(session, body)
            session.apply_label_change(changes)
            response = {
                "applied": body.get("kind"),
                "changed_points": int(sum(len(idx) for _, idx, _ in changes)),
                "summary": _summaries(session.working),
            }
            if token:
                session.edit_responses[token] = response
            return response

    @app.post(API + "/scenes/{scene_id}/undo")
    def undo(scene_id: str, x_lock_token: str | None = Header(default=None)) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            session.check_lock(x_lock_token)
            changed = session.undo()
        return {"undone_points": changed, "summary": _summaries(session.working)}

    @app.post(API + "/scenes/{scene_id}/save")
    def save(scene_id: str, x_lock_token: str | None = Header(default=None)) -> dict:
        session = get_session(scene_id)
        with session.mutex:
            session.check_lock(x_lock_token)
            ann_dir = session.seq_dir / "annotations"
            for i, lab in enumerate(session.working.per_frame):
                dataset_io.write_labels(ann_dir / f"{i:06d}.label", lab)
            session.dirty = False
        return {"saved": True, "frames": len(session.working)}

    @app.get(API + "/scenes/{scene_id}/metrics")
    def metrics(scene_id: str) -> dict:
        session = get_session(scene_id)
        if session.seq.labels is None:
            raise HTTPException(404, "no ground truth for this scene")
        try:
            report = evaluate(session.seq.labels, session.working)
        except ValueError as exc:
            raise HTTPException(404, f"no ground truth: {exc}") from exc
        return report.as_dict(scale_100=False)

    app.state.proposals = {}

    if ui_dist is None:
        ui_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    ui_dist = Path(ui_dist)
    if ui_dist.is_dir():
        app.mount("/", StaticFiles(directory=ui_dist, html=True), name="ui")

    return app
