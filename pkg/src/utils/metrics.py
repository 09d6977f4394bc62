"""
Metrics collection for Gametodyn.

Prometheus counters and histograms for simulation and fitting work. Each
collector owns its registry; the CLI can dump it as exposition text.
"""

import logging
import time
from contextlib import contextmanager
from typing import Dict, Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest

logger = logging.getLogger(__name__)


class MetricsCollector:
    """Prometheus metrics collector for Gametodyn."""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        """
        Initialize metrics collector.

        Args:
            registry: Prometheus registry (a private one if None)
        """
        self.registry = registry or CollectorRegistry()
        self._init_metrics()

    def _init_metrics(self):
        """Initialize all metrics."""

        # Simulation metrics
        self.simulations_total = Counter(
            'gametodyn_simulations_total',
            'Total number of simulated parameter sets',
            ['model'],
            registry=self.registry
        )

        self.simulation_steps_total = Counter(
            'gametodyn_simulation_steps_total',
            'Total number of integrator steps',
            ['model'],
            registry=self.registry
        )

        self.simulation_duration = Histogram(
            'gametodyn_simulation_duration_seconds',
            'Time spent in simulations',
            ['model'],
            registry=self.registry
        )

        self.clamp_events_total = Counter(
            'gametodyn_clamp_events_total',
            'Negative state components clamped to zero',
            ['model'],
            registry=self.registry
        )

        # Fitting metrics
        self.objective_evaluations_total = Counter(
            'gametodyn_objective_evaluations_total',
            'Total number of objective evaluations',
            ['model'],
            registry=self.registry
        )

        self.fits_total = Counter(
            'gametodyn_fits_total',
            'Total number of completed fits',
            ['model', 'converged'],
            registry=self.registry
        )

        self.fit_duration = Histogram(
            'gametodyn_fit_duration_seconds',
            'Time spent fitting one patient',
            ['model'],
            buckets=(1, 5, 15, 30, 60, 120, 300, 600, 1800, float('inf')),
            registry=self.registry
        )

        self.best_sse = Gauge(
            'gametodyn_fit_best_sse',
            'Objective value at the selected optimum',
            ['patient_id', 'model'],
            registry=self.registry
        )

    @contextmanager
    def timer(self, operation: str, labels: Optional[Dict[str, str]] = None):
        """
        Context manager for timing operations.

        Args:
            operation: Operation name ("simulation..." or "fit...")
            labels: Additional labels for the metric
        """
        start_time = time.perf_counter()
        try:
            yield
        finally:
            duration = time.perf_counter() - start_time
            model = labels.get("model", "unknown") if labels else "unknown"

            if operation.startswith("simulation"):
                self.simulation_duration.labels(model=model).observe(duration)
            elif operation.startswith("fit"):
                self.fit_duration.labels(model=model).observe(duration)

    def record_simulation(self, model: str, rows: int, steps: int, clamp_events: int = 0):
        """Count a (batched) simulation."""
        self.simulations_total.labels(model=model).inc(rows)
        self.simulation_steps_total.labels(model=model).inc(steps)
        if clamp_events:
            self.clamp_events_total.labels(model=model).inc(clamp_events)

    def increment_objective_evaluations(self, model: str, count: int = 1):
        """Count objective evaluations."""
        self.objective_evaluations_total.labels(model=model).inc(count)

    def record_fit(self, patient_id: str, model: str, converged: bool, sse: float):
        """Count a completed fit and publish its objective value."""
        self.fits_total.labels(model=model, converged=str(bool(converged)).lower()).inc()
        self.best_sse.labels(patient_id=patient_id, model=model).set(sse)

    def get_metrics_text(self) -> str:
        """Get Prometheus metrics in text format."""
        return generate_latest(self.registry).decode('utf-8')


# Global metrics instance
_metrics_instance: Optional[MetricsCollector] = None


def get_metrics() -> MetricsCollector:
    """Get global metrics collector instance."""
    global _metrics_instance
    if _metrics_instance is None:
        _metrics_instance = MetricsCollector()
    return _metrics_instance


def reset_metrics() -> MetricsCollector:
    """Replace the global collector with a fresh one."""
    global _metrics_instance
    _metrics_instance = MetricsCollector()
    logger.debug("Metrics registry reset")
    return _metrics_instance
