"""
Error types and centralized error handling for the camera twin
"""
import logging
import os
import sys
import traceback
from functools import wraps
from typing import Any, Callable, Dict, Optional

from pydantic import ValidationError as PydanticValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3


class TwinError(Exception):
    """Base exception class for camera twin errors"""
    exit_code = EXIT_DATA_ERROR

    def __init__(self, message: str, error_code: str = None, details: Dict = None):
        self.message = message
        self.error_code = error_code or type(self).__name__
        self.details = details or {}
        super().__init__(self.message)


class CoverageError(TwinError):
    """Spectral grid does not cover the required wavelength range"""
    pass


class UnitError(TwinError):
    """Radiance/irradiance tag mismatch"""
    pass


class DegenerateSceneError(TwinError):
    """Scene has no light to scale"""
    pass


class FormatError(TwinError):
    """Malformed spectral, raw or tabular file"""
    pass


class DomainError(TwinError):
    """Argument outside the mathematical domain of an operation"""
    pass


class FieldOfViewError(TwinError):
    """Projected object falls outside the sensor"""
    pass


class SamplingError(TwinError):
    """Grid too coarse for the optics or misaligned with the pixel pitch"""
    pass


class DetectionFormatError(TwinError):
    """Detection file failed to parse or validate"""
    pass


class UndefinedAPError(TwinError):
    """Average precision requested without ground truth"""
    pass


class MetricError(TwinError):
    """Metric inputs are insufficient"""
    pass


class DegenerateGridError(TwinError):
    """Performance map lattice has a single row or column"""
    pass


class DataError(TwinError):
    """Experiment data missing or inconsistent"""
    pass


class OutputPathError(TwinError):
    """Output location cannot be written"""
    pass


class ConfigurationError(TwinError):
    """Invalid configuration values"""
    exit_code = EXIT_CONFIG_ERROR


class ValidationError(TwinError):
    """Errors related to input validation"""
    exit_code = EXIT_CONFIG_ERROR


class ConfigHashCollisionError(TwinError):
    """Two different configurations claim the same result directory"""
    exit_code = EXIT_CONFIG_ERROR


class ErrorHandler:
    """Centralized error handling for the command line"""

    @staticmethod
    def exit_code_for(error: BaseException) -> int:
        """Map an exception onto the CLI exit-code classes"""
        if isinstance(error, TwinError):
            return error.exit_code
        if isinstance(error, PydanticValidationError):
            return EXIT_CONFIG_ERROR
        return EXIT_DATA_ERROR

    @staticmethod
    def describe(error: BaseException) -> str:
        """One-line, user-facing description of an error"""
        if isinstance(error, TwinError):
            return f"{error.error_code}: {error.message}"
        if isinstance(error, PydanticValidationError):
            first = error.errors()[0]
            where = ".".join(str(part) for part in first.get("loc", ()))
            return f"ConfigurationError: {where}: {first.get('msg')}"
        return f"{type(error).__name__}: {error}"

    @staticmethod
    def handle_file_system_error(error: Exception, file_path: str = None) -> TwinError:
        """Translate OS-level file errors into twin errors"""
        if isinstance(error, PermissionError):
            logger.error(f"Permission denied accessing file: {file_path}")
            return OutputPathError(f"Permission denied: {file_path}", details={"path": file_path})

        elif isinstance(error, FileNotFoundError):
            logger.error(f"File not found: {file_path}")
            return DataError(f"File not found: {file_path}", details={"path": file_path})

        elif isinstance(error, IsADirectoryError):
            logger.error(f"Expected file but got directory: {file_path}")
            return DataError(f"Expected a file but found a directory: {file_path}")

        elif isinstance(error, UnicodeDecodeError):
            logger.error(f"Unable to decode file: {file_path}")
            return FormatError(f"Unable to read file (encoding issue): {file_path}")

        logger.error(f"File system error: {str(error)}")
        return DataError(f"File system error: {str(error)}", details={"path": file_path})

    @staticmethod
    def validate_input(value: Any, validation_type: str, **kwargs) -> bool:
        """Validate command-line inputs"""
        try:
            if validation_type == "positive":
                if float(value) <= 0:
                    raise ValidationError(f"{kwargs.get('name', 'value')} must be positive, got {value}")

            elif validation_type == "non_negative":
                if float(value) < 0:
                    raise ValidationError(f"{kwargs.get('name', 'value')} must be >= 0, got {value}")

            elif validation_type == "levels":
                levels = [float(v) for v in value]
                if not levels:
                    raise ValidationError("At least one level is required")
                if any(level <= 0 for level in levels):
                    raise ValidationError(f"Levels must be positive: {levels}")
                if len(set(levels)) != len(levels):
                    raise ValidationError(f"Levels must be distinct: {levels}")

            elif validation_type == "existing_file":
                if not os.path.isfile(value):
                    raise ValidationError(f"File does not exist: {value}")

            elif validation_type == "existing_dir":
                if not os.path.exists(value):
                    raise ValidationError(f"Folder path does not exist: {value}")
                if not os.path.isdir(value):
                    raise ValidationError(f"Path is not a directory: {value}")

            return True

        except ValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Validation error: {str(e)}")


def error_boundary(error_message: str = "Command failed"):
    """Decorator turning exceptions in CLI handlers into exit codes"""
    def decorator(func: Callable[..., Optional[int]]) -> Callable[..., int]:
        @wraps(func)
        def wrapper(*args, **kwargs) -> int:
            try:
                result = func(*args, **kwargs)
                return EXIT_OK if result is None else result
            except (TwinError, PydanticValidationError) as e:
                print(f"{error_message}: {ErrorHandler.describe(e)}", file=sys.stderr)
                details = getattr(e, "details", None)
                logger.error(f"{type(e).__name__} in {func.__name__}: {ErrorHandler.describe(e)}")
                if details:
                    logger.debug(f"Error details: {details}")
                return ErrorHandler.exit_code_for(e)
            except OSError as e:
                translated = ErrorHandler.handle_file_system_error(e, getattr(e, "filename", None))
                print(f"{error_message}: {ErrorHandler.describe(translated)}", file=sys.stderr)
                return translated.exit_code
            except Exception as e:
                print(f"{error_message}: {str(e)}", file=sys.stderr)
                logger.error(f"Unexpected error in {func.__name__}: {str(e)}")
                logger.error(traceback.format_exc())
                return EXIT_DATA_ERROR
        return wrapper
    return decorator
