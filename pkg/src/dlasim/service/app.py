"""HTTP front end: ``uvicorn dlasim.service.app:app``."""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from dlasim.errors import DlaError, InfeasibleConfigError, NoFeasiblePointError
from dlasim.service import api
from dlasim.service import schemas as s

app = FastAPI(title="dlasim", version="0.1.0")


def _error(status: int, exc: Exception, detail=None) -> JSONResponse:
    body = s.ErrorResponse(error=str(exc), kind=type(exc).__name__, detail=detail)
    return JSONResponse(status_code=status, content=body.model_dump())


@app.exception_handler(InfeasibleConfigError)
def _infeasible(request: Request, exc: InfeasibleConfigError):
    return _error(409, exc, exc.report.to_dict() if exc.report is not None else None)


@app.exception_handler(NoFeasiblePointError)
def _no_point(request: Request, exc: NoFeasiblePointError):
    return _error(409, exc)


@app.exception_handler(DlaError)
def _bad_input(request: Request, exc: DlaError):
    return _error(400, exc)


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/validate", response_model=s.ValidateResponse)
def validate(req: s.ValidateRequest):
    return api.validate(req)


@app.post("/model", response_model=s.ModelResponse)
def model(req: s.ModelRequest):
    return api.model(req)


@app.post("/dse", response_model=s.DseResponse)
def dse(req: s.DseRequest):
    return api.dse(req)


@app.post("/simulate", response_model=s.SimulateResponse)
def simulate(req: s.SimulateRequest):
    # fidelity failures are results, not errors: check ``passed``
    return api.simulate(req)
