# sensortrust/__init__.py

from sensortrust.harness import ScenarioConfig, SummaryReport, calibrate_detector, run_batch, simulate_run
from sensortrust.loop import LoopContext, lase_ad_step
from sensortrust.scenarios import get_scenario, register_scenario
from sensortrust.utilities import MethodFactory, SensorTrustWarning

__all__ = [
    'LoopContext',
    'MethodFactory',
    'ScenarioConfig',
    'SensorTrustWarning',
    'SummaryReport',
    'calibrate_detector',
    'get_scenario',
    'lase_ad_step',
    'register_scenario',
    'run_batch',
    'simulate_run',
]
