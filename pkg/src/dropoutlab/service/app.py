"""FastAPI service wrapping the core package.

Every endpoint is a stateless wrapper over deterministic library calls;
domain and configuration errors surface as HTTP 400 with the original
message.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..checkpoint import Checkpoint
from ..config import ExperimentConfig
from ..bounds import bound_report
from ..errors import DropoutLabError
from ..family import FamilyParams, evaluate_dataset
from ..numeric import SplitSeed
from ..selftest import run_selftest
from ..sweeps import (
    buckets_csv,
    parse_sweep_grid,
    sweep_csv,
    temperature_linear_search,
)
from ..training import STREAM_EVAL, blas_single_thread, model_from_checkpoint, train
from . import schemas as s

__all__ = ["create_app", "app"]


def _load(checkpoint_json: str):
    ckpt = Checkpoint.from_json(checkpoint_json)
    model, bundle = model_from_checkpoint(ckpt)
    return ckpt, model, bundle


def _family_params(alpha, lam: float, temperature: float, samples: int) -> FamilyParams:
    if alpha == "det":
        return FamilyParams.det(lam=lam, temperature=temperature)
    return FamilyParams(alpha=float(alpha), lam=lam, temperature=temperature,
                        samples=samples)


def create_app() -> FastAPI:
    app = FastAPI(title="dropoutlab", version=__version__)

    @app.exception_handler(DropoutLabError)
    async def _domain_error(_: Request, exc: DropoutLabError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=s.HealthResponse)
    def health() -> s.HealthResponse:
        return s.HealthResponse(status="ok", version=__version__)

    @app.post("/train", response_model=s.TrainResponse)
    def train_endpoint(req: s.TrainRequest) -> s.TrainResponse:
        config = ExperimentConfig.from_dict(req.config)
        result = train(config)
        final_xe = result.history[-1][1] if result.history else None
        return s.TrainResponse(
            checkpoint_json=result.checkpoint.to_json(),
            steps=result.checkpoint.step,
            history=list(result.history),
            final_train_xe=final_xe,
        )

    @app.post("/eval", response_model=s.EvalResponse)
    def eval_endpoint(req: s.EvalRequest) -> s.EvalResponse:
        ckpt, model, bundle = _load(req.checkpoint_json)
        samples = req.samples if req.samples is not None else ckpt.config.eval.samples
        max_targets = (req.max_targets if req.max_targets is not None
                       else ckpt.config.eval.max_targets)
        fp = _family_params(req.alpha, req.lam, req.temperature, samples)
        with blas_single_thread():
            res = evaluate_dataset(model, bundle.split(req.split), fp,
                                   SplitSeed(req.seed).child(STREAM_EVAL), max_targets)
        return s.EvalResponse(xe=res.xe, perplexity=res.perplexity,
                              n_targets=res.n_targets)

    @app.post("/sweep", response_model=s.SweepResponse)
    def sweep_endpoint(req: s.SweepRequest) -> s.SweepResponse:
        ckpt, model, bundle = _load(req.checkpoint_json)
        grid = parse_sweep_grid(req.grid, ckpt.config.eval)
        csv = sweep_csv(model, bundle, grid, n_workers=max(1, req.workers))
        return s.SweepResponse(csv=csv, n_rows=csv.count("\n") - 1)

    @app.post("/bounds", response_model=s.BoundsResponse)
    def bounds_endpoint(req: s.BoundsRequest) -> s.BoundsResponse:
        ckpt, model, bundle = _load(req.checkpoint_json)
        wd = req.weight_decay if req.weight_decay is not None else ckpt.config.weight_decay
        max_targets = (req.max_targets if req.max_targets is not None
                       else ckpt.config.eval.max_targets)
        with blas_single_thread():
            report = bound_report(model, bundle.split(req.split), req.alpha, req.lam,
                                  req.samples, SplitSeed(req.seed).child(STREAM_EVAL),
                                  wd, max_targets)
        return s.BoundsResponse(
            data_term_mc=report.data_term_mc,
            power_mean_term=report.power_mean_term,
            log_z_term=report.log_z_term,
            jensen_gap=report.jensen_gap,
            prior_term=report.prior_term,
            n_samples=report.n_samples,
            n_targets=report.n_targets,
            alpha=req.alpha,
            lam=req.lam,
            split=req.split,
        )

    @app.post("/tune-temp", response_model=s.TuneTempResponse)
    def tune_temp_endpoint(req: s.TuneTempRequest) -> s.TuneTempResponse:
        _, model, bundle = _load(req.checkpoint_json)
        result = temperature_linear_search(
            model,
            bundle.split(req.split),
            (req.t_min, req.t_max, req.steps),
            deterministic=req.mode == "det",
            alpha=req.alpha,
            lam=req.lam,
            samples=req.samples,
            seed=SplitSeed(req.seed).child(STREAM_EVAL),
            max_targets=req.max_targets,
        )
        return s.TuneTempResponse(t_opt=result.t_opt, xe=result.xe_opt,
                                  grid=list(result.grid), xes=list(result.xes))

    @app.post("/buckets", response_model=s.BucketsResponse)
    def buckets_endpoint(req: s.BucketsRequest) -> s.BucketsResponse:
        ckpt, model, bundle = _load(req.checkpoint_json)
        thresholds = (list(req.thresholds) if req.thresholds is not None
                      else list(ckpt.config.eval.bucket_thresholds))
        max_targets = (req.max_targets if req.max_targets is not None
                       else ckpt.config.eval.max_targets)
        methods = req.methods
        if methods is None:
            methods = [
                s.BucketMethod(alpha="det", lam=1.0),
                s.BucketMethod(alpha=1.0, lam=0.8),
                s.BucketMethod(alpha=1.0, lam=1.0),
            ]
        fps = [_family_params(m.alpha, m.lam, m.temperature, m.samples) for m in methods]
        csv = buckets_csv(model, bundle, thresholds, fps,
                          SplitSeed(req.seed).child(STREAM_EVAL), max_targets,
                          splits=tuple(req.splits))
        return s.BucketsResponse(csv=csv)

    @app.post("/selftest", response_model=s.SelfTestResponse)
    def selftest_endpoint() -> s.SelfTestResponse:
        checks = run_selftest()
        return s.SelfTestResponse(
            passed=all(c.passed for c in checks),
            checks=[s.SelfTestCheckResult(name=c.name, passed=c.passed, detail=c.detail)
                    for c in checks],
        )

    return app


app = create_app()
