"""
Batch Processing for scenario benchmarks and parameter grids
"""

import logging
import concurrent.futures
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from config.config import BATCH_THREAD_COUNT, SWEEP_LAMBDAS
from core.detector import AnomalyDetectionEngine, DetectorConfig, replay_decisions
from core.evaluation import GroundTruth, evaluate
from core.exceptions import AnomalyEngineError
from core.flow import FrameBuffer
from core.synth import Scenario, gen_video

logger = logging.getLogger(__name__)


def _evaluate_maps(maps, gt: GroundTruth, n: int) -> dict:
    index = [m.frame_index for m in maps]
    report = evaluate(
        index, [m.frame_score for m in maps], gt,
        np.stack([m.scores for m in maps]), np.stack([m.decided for m in maps]), n
    )
    return {'auc': report.auc, 'frame_eer': report.frame_eer, 'pixel_eer': report.pixel_eer}


class BatchProcessor:
    """Runs independent detector jobs on a thread pool"""

    def __init__(self, config: Optional[DetectorConfig] = None, max_workers: int = BATCH_THREAD_COUNT):
        self.config = config or DetectorConfig()
        self.max_workers = max(1, max_workers)
        self.results = []

    # ========================================================================
    # SCENARIO BENCHMARK
    # ========================================================================

    def run_scenarios(self, scenarios: Sequence[Scenario]) -> dict:
        """
        Render, detect and evaluate every scenario

        Returns:
            dict: Summary with total/successful/failed counts, mean AUC and
                EERs, and one result row per scenario in input order
        """
        total = len(scenarios)
        successful = 0
        failed = 0
        self.results = []

        logger.info(f"Starting benchmark: {total} scenarios")

        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_position = {
                executor.submit(self._process_scenario, sc): position
                for position, sc in enumerate(scenarios)
            }

            for future in concurrent.futures.as_completed(future_to_position):
                position = future_to_position[future]
                sc = scenarios[position]
                row = {
                    'position': position,
                    'kind': sc.anomaly.kind if sc.anomaly else 'none',
                    'seed': sc.seed,
                }
                try:
                    row.update(future.result())
                    row['success'] = True
                    successful += 1
                except AnomalyEngineError as e:
                    logger.error(f"Scenario {position} (seed {sc.seed}) failed: {e}")
                    row.update({'success': False, 'error': str(e)})
                    failed += 1
                self.results.append(row)

        self.results.sort(key=lambda r: r['position'])
        done = [r for r in self.results if r['success']]
        summary = {
            'total': total,
            'successful': successful,
            'failed': failed,
            'mean_auc': float(np.mean([r['auc'] for r in done])) if done else None,
            'mean_frame_eer': float(np.mean([r['frame_eer'] for r in done])) if done else None,
            'results': self.results,
        }
        logger.info(f"Benchmark completed: {successful} successful, {failed} failed")
        return summary

    def _process_scenario(self, sc: Scenario) -> dict:
        frames, gt = gen_video(sc)
        engine = AnomalyDetectionEngine(self.config)
        maps = engine.run(frames)
        result = _evaluate_maps(maps, gt, self.config.n)
        result['fps'] = engine.throughput
        result['order'] = str(engine.theta_init.order)
        return result

    # ========================================================================
    # PARAMETER GRID
    # ========================================================================

    def run_parameter_grid(self, frames: List[FrameBuffer], gt: GroundTruth,
                           f_values: Iterable[int], n_values: Iterable[int],
                           lambdas: Iterable[float] = SWEEP_LAMBDAS) -> List[dict]:
        """
        Sweep F and N with full detector runs, and lambda_A by replaying the
        decision stage of each run

        Returns:
            list: Rows keyed lambda_a, f_frames, block_size, auc, frame_eer,
                pixel_eer, ordered by (F, N, lambda_A)
        """
        settings = [(f, n) for f in f_values for n in n_values]
        lambdas = list(lambdas)
        rows = []

        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_setting = {
                executor.submit(self._process_setting, frames, gt, f, n, lambdas): (f, n)
                for f, n in settings
            }
            for future in concurrent.futures.as_completed(future_to_setting):
                f, n = future_to_setting[future]
                try:
                    rows.extend(future.result())
                except AnomalyEngineError as e:
                    logger.error(f"Grid point F={f}, N={n} failed: {e}")
                    rows.extend({'lambda_a': lam, 'f_frames': f, 'block_size': n} for lam in lambdas)

        rows.sort(key=lambda r: (r['f_frames'], r['block_size'], r['lambda_a']))
        logger.info(f"Parameter grid completed: {len(settings)} settings x {len(lambdas)} thresholds")
        return rows

    def _process_setting(self, frames, gt, f_frames, n, lambdas) -> List[dict]:
        config = replace(self.config, f_frames=f_frames, n=n)
        engine = AnomalyDetectionEngine(config)
        engine.run(frames)
        records = engine.block_records()
        return sweep_lambdas(records, config, engine.theta_init, gt, lambdas)


def sweep_lambdas(records: dict, config: DetectorConfig, theta_init, gt: GroundTruth,
                  lambdas: Iterable[float]) -> List[dict]:
    """One evaluation row per lambda_A from replays of the recorded block features"""
    rows = []
    for lam in lambdas:
        maps = replay_decisions(records, config, theta_init, lam)
        row = {'lambda_a': float(lam), 'f_frames': config.f_frames, 'block_size': config.n}
        row.update(_evaluate_maps(maps, gt, config.n))
        rows.append(row)
        logger.debug(f"lambda_a={lam}: AUC={row['auc']:.4f}, EER={row['frame_eer']:.4f}")
    return rows
