# gateservo/main.py
#
# HTTP surface over the same library calls as the CLI.
#   uvicorn gateservo.main:app

import logging

from fastapi import FastAPI, File, HTTPException, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from gateservo.cache import run_cache, scenario_key
from gateservo.config import BATCH_WORKERS, LOG_FORMAT, log_level_name
from gateservo.perception import parse_layers, parse_rmse_dataset, receptive_field_trace, rmse_breakdown
from gateservo.scenario.models import Scenario
from gateservo.scenario.service import run_batch, run_scenario

logging.basicConfig(level=log_level_name(), format=LOG_FORMAT)
logger = logging.getLogger("gateservo.api")

app = FastAPI(title="gateservo API", version="1.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)


# ---------------------------------------------------------------------------
# GET /
# ---------------------------------------------------------------------------
@app.get("/")
def health():
    return {"status": "ok", "service": "gateservo API", "version": "1.0", "cache": run_cache.stats()}


# ---------------------------------------------------------------------------
# POST /run
# ---------------------------------------------------------------------------
@app.post("/run")
def run(scenario: Scenario, trajectory: bool = Query(default=False, description="Attach the trajectory rows")):
    key = scenario_key(scenario.model_dump_json(by_alias=True))
    cached = run_cache.get(key)
    if cached is None:
        try:
            cached = run_scenario(scenario)
        except ValueError as e:
            raise HTTPException(400, str(e))
        except Exception as e:
            logger.exception("run failed for %s", scenario.name)
            raise HTTPException(500, f"Simulation error: {e}")
        run_cache.set(key, cached)
    else:
        logger.info("run cache hit for %s", scenario.name)

    metrics, log = cached
    out = {"name": scenario.name, "seed": scenario.seed, "metrics": metrics.model_dump(), "crash_reason": log.crash_reason}
    if trajectory:
        # inf is not valid JSON; the lost-gate sentinel goes out as null
        out["trajectory"] = [
            {**row._asdict(), "err_px": row.err_px if row.err_px != float("inf") else None}
            for row in log.rows
        ]
    return out


# ---------------------------------------------------------------------------
# POST /batch
# ---------------------------------------------------------------------------
@app.post("/batch")
def batch(scenario: Scenario, repeats: int = Query(default=5, ge=1, le=100)):
    try:
        result = run_batch(scenario, repeats, BATCH_WORKERS)
    except ValueError as e:
        raise HTTPException(400, str(e))
    except Exception as e:
        logger.exception("batch failed for %s", scenario.name)
        raise HTTPException(500, f"Simulation error: {e}")
    return {
        "name": result.name,
        "kind": result.kind,
        "conditions": [c.model_dump() for c in result.conditions],
    }


# ---------------------------------------------------------------------------
# GET /rf
# ---------------------------------------------------------------------------
@app.get("/rf")
def rf(layers: str = Query(..., min_length=1, description='Space-separated "kernel,stride" pairs')):
    try:
        parsed = parse_layers(layers)
    except ValueError as e:
        raise HTTPException(400, str(e))
    trace = receptive_field_trace(parsed)
    return {
        "receptive_field": trace[-1][0],
        "layers": [
            {"kernel": layer.kernel, "stride": layer.stride, "rf": r, "jump": j}
            for layer, (r, j) in zip(parsed, trace)
        ],
    }


# ---------------------------------------------------------------------------
# POST /eval_rmse
# ---------------------------------------------------------------------------
@app.post("/eval_rmse")
async def eval_rmse(file: UploadFile = File(...)):
    try:
        text = (await file.read()).decode("utf-8")
    except UnicodeDecodeError:
        raise HTTPException(400, "Dataset must be UTF-8 text")
    try:
        truth, pred, visible = parse_rmse_dataset(text.splitlines())
        return rmse_breakdown(truth, pred, visible)
    except ValueError as e:
        raise HTTPException(400, str(e))
