"""
Monitoring and logging utilities for the camera twin
"""
import json
import logging
import os
import time
from datetime import datetime
from functools import wraps
from typing import Any, Dict, Optional

PACKAGE_LOGGERS = ("engines", "generators", "integrations", "services", "utils", "app")


def _jsonable(value: Any) -> Any:
    """Coerce numpy scalars and paths into JSON-friendly values"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        try:
            return value.item()
        except (TypeError, ValueError):
            return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class TwinLogger:
    """Structured logging for simulation runs"""

    def __init__(self, name: str = "camtwin"):
        self.logger = logging.getLogger(name)
        self._handlers = []

    def setup_logging(self, log_dir: Optional[str] = None):
        """Set up logging configuration"""
        if self._handlers:
            return self._handlers

        log_dir = log_dir or os.getenv("CAMTWIN_LOG_DIR", "logs")
        log_level = os.getenv("LOG_LEVEL", "INFO").upper()
        level = getattr(logging, log_level, logging.INFO)
        self.logger.setLevel(level)

        detailed_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
        )
        simple_formatter = logging.Formatter(
            '%(asctime)s - %(levelname)s - %(message)s'
        )

        console_handler = logging.StreamHandler()
        console_handler.setLevel(level)
        console_handler.setFormatter(simple_formatter)
        self._handlers.append(console_handler)

        try:
            os.makedirs(log_dir, exist_ok=True)

            file_handler = logging.FileHandler(os.path.join(log_dir, "app.log"))
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(detailed_formatter)

            error_handler = logging.FileHandler(os.path.join(log_dir, "error.log"))
            error_handler.setLevel(logging.ERROR)
            error_handler.setFormatter(detailed_formatter)

            self._handlers.extend([file_handler, error_handler])
        except OSError as e:
            self.logger.warning(f"File logging disabled, cannot write to {log_dir}: {e}")

        for handler in self._handlers:
            self.logger.addHandler(handler)
        self.logger.propagate = False
        return self._handlers

    def attach(self, *names: str):
        """Route the named module loggers through the same handlers"""
        for name in names:
            module_logger = logging.getLogger(name)
            module_logger.setLevel(self.logger.level)
            for handler in self._handlers:
                if handler not in module_logger.handlers:
                    module_logger.addHandler(handler)
            module_logger.propagate = False

    def log_stage(self, stage: str, details: Dict[str, Any] = None):
        """Log a pipeline stage with its parameters"""
        log_data = {
            "stage": stage,
            "timestamp": datetime.now().isoformat(),
            "details": _jsonable(details or {})
        }
        self.logger.info(f"STAGE: {json.dumps(log_data)}")

    def log_error(self, error: Exception, context: Dict[str, Any] = None):
        """Log errors with context"""
        log_data = {
            "error_type": type(error).__name__,
            "error_message": str(error),
            "context": _jsonable(context or {}),
            "timestamp": datetime.now().isoformat()
        }
        self.logger.error(f"ERROR: {json.dumps(log_data)}", exc_info=True)

    def log_performance(self, operation: str, duration: float, details: Dict[str, Any] = None):
        """Log performance metrics"""
        log_data = {
            "operation": operation,
            "duration_seconds": round(duration, 6),
            "details": _jsonable(details or {}),
            "timestamp": datetime.now().isoformat()
        }
        self.logger.info(f"PERFORMANCE: {json.dumps(log_data)}")


class PerformanceMonitor:
    """Time named operations"""

    def __init__(self):
        self.start_times = {}

    def start_timer(self, operation: str) -> str:
        """Start timing an operation"""
        timer_id = f"{operation}_{time.perf_counter_ns()}"
        self.start_times[timer_id] = time.perf_counter()
        return timer_id

    def end_timer(self, timer_id: str) -> float:
        """End timing and return the duration in seconds"""
        if timer_id not in self.start_times:
            return 0.0
        return time.perf_counter() - self.start_times.pop(timer_id)


def performance_monitor(operation_name: str):
    """Decorator to monitor function performance"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            monitor = PerformanceMonitor()
            timer_id = monitor.start_timer(operation_name)

            try:
                result = func(*args, **kwargs)
                duration = monitor.end_timer(timer_id)
                twin_logger.log_performance(operation_name, duration, {"success": True})
                return result
            except Exception as e:
                duration = monitor.end_timer(timer_id)
                twin_logger.log_performance(operation_name, duration, {"success": False, "error": str(e)})
                raise

        return wrapper
    return decorator


# Global instances
twin_logger = TwinLogger()


def setup_monitoring(log_dir: Optional[str] = None) -> TwinLogger:
    """Initialize logging handlers for a command-line session"""
    twin_logger.setup_logging(log_dir)
    twin_logger.attach(*PACKAGE_LOGGERS)
    twin_logger.logger.debug("Monitoring system initialized")
    return twin_logger
