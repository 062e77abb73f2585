import os
from dataclasses import dataclass

# Load the .env file that sits next to this module, if python-dotenv is present
try:
    from dotenv import load_dotenv
    current_dir = os.path.dirname(os.path.abspath(__file__))
    env_path = os.path.join(current_dir, '.env')

    # Paths are literal values; do not expand ${NAME} inside them.
    load_dotenv(env_path, interpolate=False)

except ImportError:
    # Without python-dotenv the process environment is used as is
    pass


def _default_workers() -> int:
    return os.cpu_count() or 1


@dataclass
class Config:
    # Experiment engine
    workers: int = 0  # trial pool size; 0 means one per processor
    output_dir: str = "."  # relative --out prefixes are resolved here
    success_tol: float = 1e-4  # relative l2 error that counts as exact recovery

    # Solver defaults used when the CLI leaves them unset
    max_iters: int = 1000
    tol: float = 1e-8

    # Exhaustive-search guards for spark and RIP constants
    spark_max_cols: int = 20
    rip_max_supports: int = 200_000

    # Logging
    log_file: str = "sparsekit.log"  # empty string logs to the console only
    log_level: str = "INFO"

    def __post_init__(self):
        if self.workers == 0:
            self.workers = _default_workers()

    def validate(self) -> None:
        """Raise one startup error listing every bad setting."""
        invalid = []
        if self.workers < 1:
            invalid.append('SPARSEKIT_WORKERS (positive integer)')
        if not isinstance(self.output_dir, str) or not self.output_dir.strip():
            invalid.append('SPARSEKIT_OUTPUT_DIR (directory path)')
        if not 0 < self.success_tol < 1:
            invalid.append('SPARSEKIT_SUCCESS_TOL (between 0 and 1)')
        if self.max_iters < 1:
            invalid.append('SPARSEKIT_MAX_ITERS (positive integer)')
        if self.tol < 0:
            invalid.append('SPARSEKIT_TOL (nonnegative)')
        if self.spark_max_cols < 1:
            invalid.append('SPARSEKIT_SPARK_MAX_COLS (positive integer)')
        if self.rip_max_supports < 1:
            invalid.append('SPARSEKIT_RIP_MAX_SUPPORTS (positive integer)')
        if self.log_level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            invalid.append('SPARSEKIT_LOG_LEVEL (DEBUG, INFO, WARNING, ERROR or CRITICAL)')
        if invalid:
            raise ValueError("Missing or invalid required configuration: " + ", ".join(invalid))

    @staticmethod
    def _int(name: str, default: int) -> int:
        value = os.getenv(name, '').strip()
        if not value:
            return default
        try:
            return int(value)
        except ValueError as exc:
            raise ValueError(f"Invalid {name}: expected an integer, got {value!r}") from exc

    @staticmethod
    def _float(name: str, default: float) -> float:
        value = os.getenv(name, '').strip()
        if not value:
            return default
        try:
            return float(value)
        except ValueError as exc:
            raise ValueError(f"Invalid {name}: expected a number, got {value!r}") from exc

    @classmethod
    def from_env(cls) -> 'Config':
        config = cls(
            workers=cls._int('SPARSEKIT_WORKERS', 0),
            output_dir=os.getenv('SPARSEKIT_OUTPUT_DIR', '.'),
            success_tol=cls._float('SPARSEKIT_SUCCESS_TOL', 1e-4),
            max_iters=cls._int('SPARSEKIT_MAX_ITERS', 1000),
            tol=cls._float('SPARSEKIT_TOL', 1e-8),
            spark_max_cols=cls._int('SPARSEKIT_SPARK_MAX_COLS', 20),
            rip_max_supports=cls._int('SPARSEKIT_RIP_MAX_SUPPORTS', 200_000),
            log_file=os.getenv('SPARSEKIT_LOG_FILE', 'sparsekit.log').strip(),
            log_level=os.getenv('SPARSEKIT_LOG_LEVEL', 'INFO').strip() or 'INFO',
        )
        config.validate()
        return config

    def resolve_output(self, prefix: str) -> str:
        """Place relative output prefixes under output_dir."""
        if os.path.isabs(prefix):
            return prefix
        return os.path.join(self.output_dir, prefix)
