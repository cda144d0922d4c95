"""
utilities.py

Shared plumbing for sensortrust: the warning category and exception types,
the optional-logger emit helper, and the MethodFactory registry that maps
method selector strings (``normal``, ``wolf-imq``, ``lase-ad-s``, ...) to
estimator classes.
"""
import logging
import warnings
from inspect import signature
from typing import Dict, List, Optional, Type


class SensorTrustWarning(UserWarning):
    """
    Warning category for recoverable conditions inside a simulation run.

    Emitted when no logger is configured: empty replay buffers, skipped
    probing updates, infeasible probing problems, infeasible detector budgets.
    """
    pass


class EstimatorFault(RuntimeError):
    """Raised when the filter produces a non-finite or singular covariance."""
    pass


class ConvergenceError(RuntimeError):
    """Raised when a fixed-point iteration or grid search produces no usable result."""
    pass


class AssumptionViolation(ValueError):
    """Raised when a sensor pair does not satisfy the sensor ordering assumption."""
    pass


def emit_warning(message: str, logger: Optional[logging.Logger] = None, stacklevel: int = 3) -> None:
    """
    Route a warning to the given logger, or to the warnings system.

    Parameters
    ----------
    message : str
        Warning text.
    logger : logging.Logger, optional
        If provided, ``logger.warning`` receives the message instead of
        ``warnings.warn``.
    stacklevel : int, optional
        Passed to ``warnings.warn``.
    """
    if logger is not None:
        logger.warning(message)
    else:
        warnings.warn(message, SensorTrustWarning, stacklevel=stacklevel)


class MethodFactory:
    """
    Factory and registry for estimator/defense methods.

    Class Attributes
    ----------------
    registry : dict
        Mapping from method selector string to its estimator class.
    """
    registry: Dict[str, Type] = {}

    @classmethod
    def register(cls, method_name: str):
        """
        Decorator to register an estimator class under a selector string.

        Parameters
        ----------
        method_name : str
            Selector used on the command line and in scenario configs.

        Returns
        -------
        Callable
            A decorator that registers the class in the factory registry.
        """
        def inner(method_cls):
            cls.registry[method_name] = method_cls
            method_cls.method_name = method_name
            return method_cls
        return inner

    @classmethod
    def names(cls) -> List[str]:
        """Registered selector strings, in registration order."""
        return list(cls.registry.keys())

    @classmethod
    def create(cls, method_name: str, **kwargs):
        """
        Instantiate the estimator registered under ``method_name``.

        Parameters
        ----------
        method_name : str
            Selector string, e.g. ``'wolf-md'``.
        **kwargs : dict
            Constructor arguments. Keys the class does not accept are rejected.

        Returns
        -------
        object
            A new estimator instance.

        Raises
        ------
        ValueError
            If the method is unknown or invalid keyword arguments are given.
        """
        method_cls = cls.registry.get(method_name)
        if not method_cls:
            raise ValueError(
                f"Unknown method '{method_name}'. Choose one of: {', '.join(cls.names())}"
            )

        init_params = signature(method_cls.__init__).parameters
        valid_keys = set(init_params.keys()) - {'self'}
        invalid_keys = set(kwargs) - valid_keys
        if invalid_keys:
            raise ValueError(
                f"Invalid keyword arguments for '{method_name}' method: {sorted(invalid_keys)}"
            )
        return method_cls(**kwargs)
