from .config import SimConfig, load_config, write_default_config
from .export import read_log_csv, write_log_csv, write_table_csv
from .metrics import Metrics, compute_metrics, sweep_payloads, sweep_table
from .simulation import SimLog, disturbance_models, run_controllers, run_simulation, sensor_filter

__all__ = ["Metrics", "SimConfig", "SimLog", "compute_metrics", "disturbance_models", "load_config",
           "read_log_csv", "run_controllers", "run_simulation", "sensor_filter", "sweep_payloads",
           "sweep_table", "write_default_config", "write_log_csv", "write_table_csv"]
