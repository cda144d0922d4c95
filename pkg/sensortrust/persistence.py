"""
persistence.py

JSON and CSV persistence for sensortrust artifacts: scenario configs,
detector calibrations, summary reports and per-step run logs.

Objects are serialized through their ``to_dict()`` methods; this module only
owns file formats, extension checks and I/O error context.
"""
import json
import os
from typing import Any, Dict

import pandas as pd

from sensortrust.detection import DetectorCalibration


class SensorTrustPersistence:
    """
    Serialization and file I/O for sensortrust artifacts.
    """
    @staticmethod
    def to_dict(obj) -> Dict[str, Any]:
        """
        Serializable dictionary of ``obj``.

        Parameters
        ----------
        obj : object
            A dict, or any object exposing ``to_dict()``.

        Raises
        ------
        ValueError
            If the object cannot be serialized.
        """
        if isinstance(obj, dict):
            return obj
        if hasattr(obj, "to_dict"):
            return obj.to_dict()
        raise ValueError(f"Cannot serialize object of type {type(obj).__name__}")

    @staticmethod
    def to_json(obj) -> str:
        return json.dumps(SensorTrustPersistence.to_dict(obj), indent=2, allow_nan=False)

    @staticmethod
    def _check_extension(filepath: str, expected: str) -> None:
        _, ext = os.path.splitext(filepath)
        if ext.lower() != expected:
            raise ValueError(f"Unsupported file extension: {ext}. Use {expected}")

    @staticmethod
    def export(obj, filepath: str) -> None:
        """
        Write ``obj`` as JSON.

        Parameters
        ----------
        obj : object
            A dict or an object with ``to_dict()``.
        filepath : str
            Output path, must end with .json

        Raises
        ------
        ValueError
            If the file extension is unsupported.
        OSError
            If the file cannot be written; the message names the path.
        """
        SensorTrustPersistence._check_extension(filepath, '.json')
        content = SensorTrustPersistence.to_json(obj)
        try:
            with open(filepath, 'w') as f:
                f.write(content)
        except OSError as e:
            raise OSError(f"Could not write {filepath}: {e}") from e

    @staticmethod
    def from_json(json_str: str) -> Dict[str, Any]:
        try:
            data = json.loads(json_str)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON string: {e}")
        if not isinstance(data, dict):
            raise ValueError("Top-level JSON value must be an object")
        return data

    @staticmethod
    def load(filepath: str) -> Dict[str, Any]:
        """
        Read a JSON artifact into a dictionary.

        Raises
        ------
        ValueError
            If the file extension is unsupported or the content is invalid.
        FileNotFoundError
            If the file does not exist.
        """
        SensorTrustPersistence._check_extension(filepath, '.json')
        with open(filepath, 'r') as f:
            content = f.read()
        try:
            return SensorTrustPersistence.from_json(content)
        except ValueError as e:
            raise ValueError(f"{filepath}: {e}")

    @staticmethod
    def load_calibration(filepath: str) -> DetectorCalibration:
        return DetectorCalibration.from_dict(SensorTrustPersistence.load(filepath))

    @staticmethod
    def export_frame(frame: pd.DataFrame, filepath: str) -> None:
        """
        Write a run log as CSV.

        Raises
        ------
        ValueError
            If the file extension is unsupported.
        OSError
            If the file cannot be written; the message names the path.
        """
        SensorTrustPersistence._check_extension(filepath, '.csv')
        try:
            frame.to_csv(filepath, index=False)
        except OSError as e:
            raise OSError(f"Could not write {filepath}: {e}") from e

    @staticmethod
    def load_frame(filepath: str) -> pd.DataFrame:
        SensorTrustPersistence._check_extension(filepath, '.csv')
        return pd.read_csv(filepath)
