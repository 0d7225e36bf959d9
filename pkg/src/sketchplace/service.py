"""HTTP service for the interactive sketching loop.

One in-memory session per server: load a scene, accept sketches, fit the
region models, solve for a base placement, and hand results (including
probability-grid previews) to the browser UI. Mutating requests are
serialized by a lock; reads are free.

Session state machine: scene-loaded -> sketched -> fitted -> solved;
adding or deleting a sketch drops back to sketched and invalidates models
(cached solve results stay retrievable by id).
"""

from __future__ import annotations

import io
import threading
import uuid
from dataclasses import asdict, replace

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .datasets import SceneSpec
from .energymodel import EnergyModel, TrainConfig, energy, membership_probability
from .errors import SketchPlaceError
from .geometry import Sketch, VALID_LABELS
from .kinematics import KinematicChain
from .pipeline import SceneModels, fit_scene_models
from .solver import SolverConfig, solve_multistart


class SketchPayload(BaseModel):
    label: str
    vertices: list[tuple[float, float]] = Field(min_length=1)


class FitPayload(BaseModel):
    epochs: int | None = None
    seed: int | None = None
    grid_size: int = 80


class SolvePayload(BaseModel):
    restarts: int = 4
    seed: int | None = None
    step_size: float | None = None
    iterations: int | None = None
    threshold: float | None = None


def probability_grid(model: EnergyModel, lo, hi, n: int, z: float | None = None) -> dict:
    """sigma(energy) sampled on an n x n grid over [lo, hi] in x, y."""
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    if model.input_dim == 3:
        pts = np.column_stack([pts, np.full(len(pts), z)])
    probs = membership_probability(model, pts).reshape(n, n)
    return {
        "x0": float(xs[0]), "y0": float(ys[0]),
        "dx": float(xs[1] - xs[0]), "dy": float(ys[1] - ys[0]),
        "nx": n, "ny": n, "z": z,
        "values": [[round(float(v), 6) for v in row] for row in probs],
    }


def depth_image_png(scene: SceneSpec) -> bytes:
    """Grayscale render of the depth grid (near = bright, invalid = black)."""
    from PIL import Image

    d = scene.depth.values.astype(float)
    valid = scene.depth.valid
    if valid.any():
        lo, hi = d[valid].min(), d[valid].max()
        span = (hi - lo) or 1.0
        img = np.where(valid, 255.0 - 205.0 * (d - lo) / span, 0.0)
    else:
        img = np.zeros_like(d)
    buf = io.BytesIO()
    Image.fromarray(img.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


class Session:
    def __init__(self, scene: SceneSpec, chain: KinematicChain,
                 train: TrainConfig, solver: SolverConfig):
        self.scene = scene
        self.chain = chain
        self.train = train
        self.solver = solver
        self.lock = threading.Lock()
        self.sketches: dict[int, Sketch] = {}
        self.next_id = 1
        self.models: SceneModels | None = None
        self.results: dict[str, dict] = {}
        self.state = "scene-loaded"
        for sk in scene.sketches:
            self.sketches[self.next_id] = sk
            self.next_id += 1
        if self.sketches:
            self.state = "sketched"

    def current_scene(self) -> SceneSpec:
        return replace(self.scene, sketches=list(self.sketches.values()),
                       ground_truth=self.scene.ground_truth)


def create_app(scene: SceneSpec, chain: KinematicChain,
               train: TrainConfig | None = None,
               solver: SolverConfig | None = None,
               frontend_dir=None) -> FastAPI:
    solver = solver or SolverConfig(z_limits=scene.z_limits,
                                    omega_limits=scene.omega_limits)
    session = Session(scene, chain, train or TrainConfig(), solver)
    app = FastAPI(title="sketchplace")
    app.state.session = session

    def error(status, code, message):
        raise HTTPException(status_code=status,
                            detail={"code": code, "message": message})

    @app.get("/api/scene")
    def get_scene():
        cam = session.scene.camera
        return {
            "name": session.scene.name,
            "width": session.scene.depth.width,
            "height": session.scene.depth.height,
            "camera": {
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "rotation": cam.rotation.ravel().tolist(),
                "translation": cam.translation.tolist(),
            },
            "z_limits": list(session.scene.z_limits),
            "omega_limits": list(session.scene.omega_limits),
            "state": session.state,
            "sketches": [
                {"id": sid, "label": sk.label,
                 "vertices": [[float(u), float(v)] for u, v in sk.vertices]}
                for sid, sk in session.sketches.items()
            ],
        }

    @app.get("/api/scene/image")
    def get_scene_image():
        return Response(content=depth_image_png(session.scene),
                        media_type="image/png")

    @app.post("/api/sketch")
    def post_sketch(payload: SketchPayload):
        if payload.label not in VALID_LABELS:
            error(422, "configuration", f"label must be one of {VALID_LABELS}")
        with session.lock:
            try:
                sketch = Sketch(np.array(payload.vertices, dtype=float), payload.label)
                sketch.validate(session.scene.depth.width, session.scene.depth.height)
            except SketchPlaceError as exc:
                error(422, exc.code, str(exc))
            sid = session.next_id
            session.next_id += 1
            session.sketches[sid] = sketch
            session.models = None
            session.state = "sketched"
        return {"id": sid, "state": session.state}

    @app.delete("/api/sketch/{sid}")
    def delete_sketch(sid: int):
        with session.lock:
            if sid not in session.sketches:
                error(404, "not-found", f"no sketch {sid}")
            del session.sketches[sid]
            session.models = None
            session.state = "sketched" if session.sketches else "scene-loaded"
        return {"state": session.state}

    @app.post("/api/fit")
    def post_fit(payload: FitPayload):
        with session.lock:
            train = session.train
            if payload.epochs is not None:
                train = replace(train, epochs=payload.epochs)
            if payload.seed is not None:
                train = replace(train, seed=payload.seed)
            try:
                scene_now = session.current_scene()
            except SketchPlaceError as exc:
                error(422, exc.code, str(exc))
            try:
                session.models = fit_scene_models(scene_now, train)
            except SketchPlaceError as exc:
                error(422, exc.code, str(exc))
            session.state = "fitted"
            models = session.models
            out = {
                "state": session.state,
                "roi_model": {
                    "input_dim": models.roi_model.input_dim,
                    "points": len(models.roi_points),
                    "final_loss": models.roi_model.training_loss[-1]
                    if models.roi_model.training_loss else None,
                },
            }
            z_slice = float(np.median(models.roi_points.points[:, 2]))
            lo = models.roi_model.data_lo[:2].astype(float) - 0.5
            hi = models.roi_model.data_hi[:2].astype(float) + 0.5
            if models.constraint_model is not None:
                lo = np.minimum(lo, models.constraint_model.data_lo.astype(float) - 0.3)
                hi = np.maximum(hi, models.constraint_model.data_hi.astype(float) + 0.3)
                out["constraint_model"] = {
                    "input_dim": 2,
                    "points": len(models.permissible_points),
                }
                out["constraint_grid"] = probability_grid(
                    models.constraint_model, lo, hi, payload.grid_size)
            out["roi_grid"] = probability_grid(
                models.roi_model, lo, hi, payload.grid_size, z=z_slice)
        return out

    @app.post("/api/solve")
    def post_solve(payload: SolvePayload):
        with session.lock:
            if session.models is None:
                error(409, "invalid-state", "fit must run before solve")
            cfg = session.solver
            if payload.seed is not None:
                cfg = replace(cfg, seed=payload.seed)
            if payload.step_size is not None:
                cfg = replace(cfg, step_size=payload.step_size)
            if payload.iterations is not None:
                cfg = replace(cfg, iterations=payload.iterations)
            if payload.threshold is not None:
                cfg = replace(cfg, threshold=payload.threshold)
            try:
                result = solve_multistart(
                    session.models.roi_model, session.models.constraint_model,
                    session.chain, cfg, restarts=payload.restarts)
            except SketchPlaceError as exc:
                error(422, exc.code, str(exc))
            rid = uuid.uuid4().hex[:12]
            best_trace = result.traces[int(np.argmax(result.final_energies))]
            payload_out = {
                "id": rid,
                "placement": asdict(result.best),
                "energy": result.best_energy,
                "trace": [asdict(e) for e in best_trace.entries],
                "restarts": len(result.finals),
                "finals": [asdict(c) for c in result.finals],
            }
            session.results[rid] = payload_out
            session.state = "solved"
        return payload_out

    @app.get("/api/result/{rid}")
    def get_result(rid: str):
        if rid not in session.results:
            error(404, "not-found", f"no result {rid}")
        return session.results[rid]

    if frontend_dir is not None:
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")
    return app
