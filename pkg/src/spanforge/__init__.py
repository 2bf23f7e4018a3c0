"""Observability toolkit for microservices: distributed tracing, application
and infrastructure metrics, sampling, and a deterministic workload simulator."""

__version__ = "0.1.0"
