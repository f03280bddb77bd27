"""HTTP facade over the harmonizer.

Synchronous request/response: the size caps keep every request at desk
scale, so there is no job queue. Responses always echo the effective seed,
and identical requests with identical seeds produce byte-identical bodies.
Models are loaded once and shared read-only; each request owns its
ensemble and random stream.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.staticfiles import StaticFiles

from . import __version__
from .errors import (
    CcompError,
    ModelMismatchError,
    ScoreParseError,
    ScoreValidationError,
    UnsatisfiableConstraintError,
    ZeroWeightError,
)
from .harmonizer import (
    ConstraintSpec,
    HarmonizationRequest,
    harmonize,
    evaluate_harmonization,
    marginal_heatmap,
)
from .model import load_model
from .score import Score, parse_score
from .smc import RESAMPLE_POLICIES

MAX_NOTES = 2_000
MAX_PATHS = 8_192
MAX_WORK = 4_000_000
MAX_OUTPUTS = 64


class _BadRequest(Exception):
    def __init__(self, detail: str):
        self.detail = detail


class ModelRegistry:
    """Lazily loaded, read-only shared models."""

    def __init__(self, model_dir: Path | None, default_path: Path | None):
        self.model_dir = model_dir
        self.default_path = default_path
        self._cache: dict[Path, object] = {}
        self._lock = threading.Lock()

    def list_models(self) -> list[dict]:
        out = []
        if self.model_dir and self.model_dir.is_dir():
            for path in sorted(self.model_dir.glob("*.json")):
                try:
                    doc = json.loads(path.read_text())
                    kind = doc.get("kind")
                    alphabet = doc.get("alphabet")
                    if kind not in ("ngram", "recurrent") or not isinstance(alphabet, list):
                        continue
                except (json.JSONDecodeError, OSError):
                    continue
                out.append({
                    "name": path.stem,
                    "kind": kind,
                    "alphabet_size": len(alphabet),
                })
        return out

    def resolve(self, name: str | None) -> Path:
        if name is None:
            if self.default_path is not None:
                return self.default_path
            models = self.list_models()
            if self.model_dir and models:
                return self.model_dir / f"{models[0]['name']}.json"
            raise _BadRequest("no model specified and no default model configured")
        if self.model_dir is None:
            raise _BadRequest("no model directory configured")
        path = self.model_dir / f"{name}.json"
        if not path.is_file():
            raise _BadRequest(f"unknown model {name!r}")
        return path

    def load(self, name: str | None):
        path = self.resolve(name)
        with self._lock:
            model = self._cache.get(path)
            if model is None:
                model = load_model(path)
                self._cache[path] = model
            return model


def _json_response(payload: dict, status_code: int = 200) -> Response:
    body = json.dumps(payload, separators=(",", ":"), sort_keys=True)
    return Response(content=body, status_code=status_code,
                    media_type="application/json")


def _parse_harmonize_body(body: dict) -> dict:
    if not isinstance(body, dict):
        raise _BadRequest("request body must be a JSON object")
    if "score" not in body or not isinstance(body["score"], dict):
        raise _BadRequest("missing or invalid 'score'")
    try:
        score = parse_score(json.dumps(body["score"]))
    except (ScoreParseError, ScoreValidationError) as exc:
        raise _BadRequest(f"invalid score: {exc}")

    constraints = None
    if body.get("constraints") is not None:
        if not isinstance(body["constraints"], dict):
            raise _BadRequest("'constraints' must be an object")
        try:
            constraints = ConstraintSpec.from_document(body["constraints"])
        except ScoreParseError as exc:
            raise _BadRequest(f"invalid constraints: {exc}")

    fixed_parts = body.get("fixed_parts", [])
    if (not isinstance(fixed_parts, list)
            or any(isinstance(p, bool) or not isinstance(p, int) for p in fixed_parts)):
        raise _BadRequest("'fixed_parts' must be a list of integers")

    method = body.get("method", "smc")
    if method not in ("smc", "beam"):
        raise _BadRequest("'method' must be 'smc' or 'beam'")

    paths = body.get("paths", 512)
    if isinstance(paths, bool) or not isinstance(paths, int) or paths < 1:
        raise _BadRequest("'paths' must be a positive integer")

    seed = body.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise _BadRequest("'seed' must be an integer or null")

    policy = body.get("resample_policy", "always")
    if policy not in RESAMPLE_POLICIES:
        raise _BadRequest(f"'resample_policy' must be one of {RESAMPLE_POLICIES}")

    max_outputs = body.get("max_outputs", 5)
    if (isinstance(max_outputs, bool) or not isinstance(max_outputs, int)
            or not 1 <= max_outputs <= MAX_OUTPUTS):
        raise _BadRequest(f"'max_outputs' must be in 1..{MAX_OUTPUTS}")

    model_name = body.get("model")
    if model_name is not None and not isinstance(model_name, str):
        raise _BadRequest("'model' must be a string or null")

    # size caps keep latency in seconds
    if score.n > MAX_NOTES:
        raise _BadRequest(f"score has {score.n} notes; cap is {MAX_NOTES}")
    if paths > MAX_PATHS:
        raise _BadRequest(f"paths {paths} over cap {MAX_PATHS}")
    if score.n * paths > MAX_WORK:
        raise _BadRequest(
            f"notes*paths = {score.n * paths} over cap {MAX_WORK}")

    return {
        "score": score, "constraints": constraints,
        "fixed_parts": frozenset(fixed_parts), "method": method,
        "paths": paths, "seed": seed, "resample_policy": policy,
        "max_outputs": max_outputs, "model": model_name,
    }


def _score_document(score: Score) -> dict:
    from .score import score_to_document

    return score_to_document(score)


def create_app(model_dir: str | Path | None = None,
               default_model: str | Path | None = None,
               ui_dir: str | Path | None = None) -> FastAPI:
    if model_dir is None:
        env_dir = os.environ.get("CCOMP_MODEL_DIR")
        model_dir = Path(env_dir) if env_dir else None
    else:
        model_dir = Path(model_dir)
    if default_model is None:
        env_model = os.environ.get("CCOMP_MODEL_PATH")
        default_model = Path(env_model) if env_model else None
    else:
        default_model = Path(default_model)
    registry = ModelRegistry(model_dir, default_model)

    app = FastAPI(title="ccomp", version=__version__)

    @app.get("/api/v1/health")
    def health() -> Response:
        return _json_response({"status": "ok", "version": __version__})

    @app.get("/api/v1/models")
    def models() -> Response:
        return _json_response({"models": registry.list_models()})

    @app.post("/api/v1/harmonize")
    async def harmonize_endpoint(request: Request) -> Response:
        try:
            raw = await request.json()
        except json.JSONDecodeError:
            return _json_response(
                {"error": "invalid_request", "detail": "body is not valid JSON"}, 400)
        try:
            parsed = _parse_harmonize_body(raw)
            model = registry.load(parsed["model"])
        except _BadRequest as exc:
            return _json_response(
                {"error": "invalid_request", "detail": exc.detail}, 400)

        seed = parsed["seed"]
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "little")
        try:
            req = HarmonizationRequest(
                score=parsed["score"], fixed_parts=parsed["fixed_parts"],
                extra=parsed["constraints"], method=parsed["method"],
                paths=parsed["paths"], seed=seed,
                resample_policy=parsed["resample_policy"],
                max_outputs=parsed["max_outputs"])
            result = harmonize(req, model)
        except UnsatisfiableConstraintError as exc:
            return _json_response({
                "error": "unsatisfiable_constraint",
                "detail": str(exc),
                "position": exc.position,
            }, 422)
        except ZeroWeightError as exc:
            return _json_response({
                "error": "unsatisfiable_constraint",
                "detail": str(exc),
                "position": exc.step,
            }, 422)
        except (ModelMismatchError, ScoreParseError, ValueError) as exc:
            return _json_response(
                {"error": "invalid_request", "detail": str(exc)}, 400)
        except CcompError as exc:
            return _json_response(
                {"error": "internal", "detail": str(exc)}, 500)

        metrics = evaluate_harmonization(result, model)
        # wall-clock time would break response determinism
        metrics.pop("wall_ms", None)
        payload = {
            "seed": seed,
            "method": result.method,
            "paths": result.paths,
            "results": [
                {"score": _score_document(s), "log_prob": lp}
                for s, lp in zip(result.scores, result.log_probs)
            ],
            "metrics": metrics,
            "filtering": {str(k): v for k, v in result.filtering.items()},
            "heatmap": marginal_heatmap(result),
        }
        return _json_response(payload)

    if ui_dir is None:
        env_ui = os.environ.get("CCOMP_UI_DIR")
        ui_dir = Path(env_ui) if env_ui else None
    else:
        ui_dir = Path(ui_dir)
    if ui_dir and ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
